"""Benchmark driver tests."""

import json
import math

import numpy as np
import pytest

from tiermem.bench import (
    RunReport,
    VariantFlags,
    emit_score_histograms,
    histogram_csv,
    oracle_scores,
    parse_variant,
    probe_digest,
    report_json,
    resolve_prior_bank,
    run_growth_sweep,
    run_ingest,
    run_oracle,
    run_query_replay,
    sweep_csv,
    write_report,
)
from tiermem.errors import EmptyInputError, UnknownVariant, ValidationError
from tiermem.retrieval import QuerySpec, rank_top_k, score_candidates
from tiermem.synth import StreamSpec, event_direction, generate_stream, query_for_event
from tiermem.tiers import TierConfig, new_memory
from tiermem.traceio import RawFrame, RawToken
from tiermem.vecspace import ProbeBank


def make_frame(index, ts, vectors, dim=None):
    toks = tuple(
        RawToken(spatial_row=i, spatial_col=0, vector=np.asarray(v, dtype=np.float32))
        for i, v in enumerate(vectors)
    )
    return RawFrame(frame_index=index, timestamp=float(ts), tokens=toks)


def axis(dim, i):
    v = np.zeros(dim)
    v[i] = 1.0
    return v


def query(tokens, arrival, *, k=5, rho=0.1, lam=0.5, gt=None, qid="q"):
    return QuerySpec(
        query_id=qid,
        arrival_time=float(arrival),
        tokens=np.asarray(tokens, dtype=np.float64),
        rho=rho,
        top_k=k,
        dispersion_lambda=lam,
        ground_truth_frames=gt,
    )


def no_compression_config(frames, tokens_per_frame):
    # Caps and budget sit above the raw stream size, so nothing is dropped.
    return TierConfig(
        short_cap_frames=4,
        mid_cap_frames=frames + 4,
        token_budget=max(4096, 2 * frames * tokens_per_frame),
        keep_fraction=1.0,
        long_quota_per_frame=tokens_per_frame,
        tokens_per_frame_max=tokens_per_frame,
    )


def planted_spec(dim=32, frames=40, tpf=8, event_frame=10, sigma=0.0, strength=1.0, seed=7):
    return StreamSpec(
        dim=dim,
        frames=frames,
        tokens_per_frame=tpf,
        events=((event_frame, 1, strength),),
        noise_sigma=sigma,
        rng_seed=seed,
    )


def aligned_bank(spec, extra_seed=0):
    """Probe bank whose first probe is the planted event direction."""
    generated = ProbeBank.generated(spec.dim, n=4, seed=extra_seed)
    probes = np.vstack([event_direction(spec, 0)[None, :], generated.matrix])
    return ProbeBank(probes)


# -- variants ---------------------------------------------------------------


def test_parse_variant_defaults_and_full():
    assert parse_variant(None) == VariantFlags()
    assert parse_variant("") == VariantFlags()
    assert parse_variant("gate=always") == VariantFlags(gate="always")
    flags = parse_variant("gate=never,prior=random,stage=s2")
    assert (flags.gate, flags.prior, flags.stage) == ("never", "random", "s2")


@pytest.mark.parametrize(
    "text",
    ["gate=sometimes", "prior=oracle", "stage=s3", "mode=ema", "gateema", "gate=ema,x=1"],
)
def test_parse_variant_rejects_unknown(text):
    with pytest.raises(UnknownVariant):
        parse_variant(text)


def test_variant_flags_validate_direct_construction():
    with pytest.raises(UnknownVariant):
        VariantFlags(stage="stage1")


def test_resolve_prior_bank():
    bank = ProbeBank.generated(16, n=5, seed=3)
    assert resolve_prior_bank(bank, "bank") is bank
    single = resolve_prior_bank(bank, "single")
    assert len(single) == 1
    assert np.array_equal(single.matrix[0], bank.matrix[0])
    rand1 = resolve_prior_bank(bank, "random", seed=3)
    rand2 = resolve_prior_bank(bank, "random", seed=3)
    assert np.array_equal(rand1.matrix, rand2.matrix)
    assert not np.array_equal(rand1.matrix, bank.matrix)
    assert (rand1.dim, len(rand1)) == (bank.dim, len(bank))
    # The random prior must not collapse onto a bank generated from the
    # same seed, or the ablation would compare a bank against itself.
    assert not np.array_equal(rand1.matrix, ProbeBank.generated(16, n=5, seed=3).matrix)


# -- run_ingest -------------------------------------------------------------


def test_run_ingest_empty_trace():
    bank = ProbeBank.generated(8, n=3, seed=0)
    report = run_ingest([], TierConfig(), bank)
    assert report.kind == "ingest"
    assert report.rows == ()
    assert report.summary["frames"] == 0
    assert report.summary["final_total_tokens"] == 0
    assert report.summary["peak_total_tokens"] == 0


def test_run_ingest_rows_and_summary():
    spec = StreamSpec(dim=16, frames=12, tokens_per_frame=6, noise_sigma=0.2, rng_seed=1)
    bank = ProbeBank.generated(16, n=5, seed=0)
    cfg = TierConfig(short_cap_frames=2, mid_cap_frames=3, token_budget=30,
                     tokens_per_frame_max=6, scene_threshold=-0.5)
    report = run_ingest(generate_stream(spec), cfg, bank)
    assert report.summary["frames"] == 12
    assert len(report.rows) == 12
    for row in report.rows:
        assert row["total_tokens"] <= cfg.token_budget
        assert row["total_tokens"] == (
            row["short_tokens"] + row["mid_tokens"] + row["long_tokens"]
        )
    assert report.summary["final_total_tokens"] == report.rows[-1]["total_tokens"]
    assert report.summary["peak_total_tokens"] >= report.summary["final_total_tokens"]
    assert report.summary["dropped_temporal"] > 0
    assert len(report.summary["state_digest"]) == 64
    assert report.inputs["probe_digest"] == probe_digest(bank)


def test_run_ingest_is_deterministic_modulo_timings():
    spec = StreamSpec(dim=8, frames=10, tokens_per_frame=4, noise_sigma=0.3, rng_seed=9)
    bank = ProbeBank.generated(8, n=4, seed=2)
    cfg = TierConfig(short_cap_frames=2, mid_cap_frames=4, token_budget=24,
                     tokens_per_frame_max=4)
    a = run_ingest(generate_stream(spec), cfg, bank)
    b = run_ingest(generate_stream(spec), cfg, bank)
    assert report_json(a, include_timings=False) == report_json(b, include_timings=False)
    assert "timings" not in a.to_json_dict(include_timings=False)


# -- run_oracle -------------------------------------------------------------


def test_oracle_single_frame_top1():
    frame = make_frame(0, 0.0, [axis(4, 0), axis(4, 1)])
    report = run_oracle([frame], [query([axis(4, 0)], arrival=0.0, k=1)])
    assert report.rows[0]["top_k"] == [0]
    # Hand value: token scores are 1.0 and 0.0, frame score is their mean.
    assert report.rows[0]["scores"] == [[0, 0.5]]


def test_oracle_orthogonal_query_ties_break_recent_first():
    frames = [make_frame(i, float(i), [axis(4, 0)]) for i in range(6)]
    report = run_oracle(frames, [query([axis(4, 2)], arrival=5.0, k=3)])
    row = report.rows[0]
    assert all(score == 0.0 for _, score in row["scores"])
    assert row["top_k"] == [5, 4, 3]


def test_oracle_respects_arrival_and_exclusion():
    frames = [make_frame(i, float(i), [axis(4, i % 4)]) for i in range(8)]
    q = query([axis(4, 3)], arrival=5.0, k=1)
    report = run_oracle(frames, [q])
    assert report.rows[0]["candidates"] == 6
    assert report.rows[0]["top_k"] == [3]
    shifted = run_oracle(frames, [q], exclude_most_recent=3)
    assert shifted.rows[0]["candidates"] == 3
    assert shifted.rows[0]["top_k"] == [2]
    assert shifted.summary["exclude_most_recent"] == 3


def test_engine_ranking_matches_oracle_without_compression():
    spec = StreamSpec(dim=16, frames=24, tokens_per_frame=6, noise_sigma=0.3, rng_seed=11)
    frames = generate_stream(spec)
    cfg = no_compression_config(spec.frames, spec.tokens_per_frame)
    bank = ProbeBank.generated(16, n=5, seed=1)
    mem = new_memory(cfg, bank)
    for f in frames:
        mem.ingest_frame(f.timestamp, f.ingest_tokens())
    snap = mem.freeze()
    rng = np.random.default_rng(3)
    for _ in range(10):
        q = query(rng.standard_normal((2, 16)), arrival=23.0, k=5)
        engine = rank_top_k(score_candidates(snap, q), 5)
        oracle = oracle_scores(frames, q.tokens.tolist(), 23.0,
                               exclude_most_recent=len(snap.short))
        ranked = sorted(oracle.items(), key=lambda kv: (-kv[1], -kv[0]))
        assert engine == [f for f, _ in ranked[:5]]


# -- run_query_replay -------------------------------------------------------


def test_replay_planted_event_full_recall():
    spec = planted_spec(event_frame=10, sigma=0.0, strength=1.0)
    bank = aligned_bank(spec)
    cfg = TierConfig(short_cap_frames=4, mid_cap_frames=8, token_budget=128,
                     long_quota_per_frame=4, tokens_per_frame_max=8)
    q = query_for_event(spec, 0, jitter=0.0, rho=2.0)
    report = run_query_replay(generate_stream(spec), [q], cfg, bank)
    row = report.rows[0]
    assert row["recall"] == 1.0
    assert row["result"]["gated_short_only"] is False
    assert report.summary["mean_recall"] == 1.0


def test_replay_always_gate_never_retrieves():
    spec = planted_spec()
    bank = aligned_bank(spec)
    cfg = TierConfig(short_cap_frames=4, mid_cap_frames=8, token_budget=128,
                     long_quota_per_frame=4, tokens_per_frame_max=8)
    queries = [query_for_event(spec, 0, jitter=0.0, rho=2.0, query_id=f"q{i}") for i in range(3)]
    report = run_query_replay(generate_stream(spec), queries, cfg, bank, "gate=always")
    assert all(r["result"]["gated_short_only"] for r in report.rows)
    assert all(r["result"]["retrieved_frames"] == [] for r in report.rows)
    assert report.summary["gated_fraction"] == 1.0


def test_replay_never_gate_still_scores_candidates():
    # Query aimed at the short tier: the ema gate would fire, never must not.
    spec = planted_spec(event_frame=38, sigma=0.1)
    bank = aligned_bank(spec)
    cfg = TierConfig(short_cap_frames=4, mid_cap_frames=8, token_budget=128,
                     long_quota_per_frame=4, tokens_per_frame_max=8)
    q = query_for_event(spec, 0, jitter=0.0, rho=0.1)
    report = run_query_replay(generate_stream(spec), [q], cfg, bank, "gate=never")
    row = report.rows[0]
    assert row["result"]["gated_short_only"] is False
    assert len(row["result"]["frame_scores"]) > 0
    assert len(row["result"]["retrieved_frames"]) >= 1


def test_replay_causality_and_truncation():
    spec = StreamSpec(dim=8, frames=30, tokens_per_frame=3, noise_sigma=0.3, rng_seed=4)
    bank = ProbeBank.generated(8, n=4, seed=0)
    cfg = TierConfig(short_cap_frames=3, mid_cap_frames=6, token_budget=45,
                     tokens_per_frame_max=3, scene_threshold=-0.5)
    queries = [
        query([axis(8, 1)], arrival=29.0, qid="late"),
        query([axis(8, 0)], arrival=9.5, qid="early"),
    ]
    report = run_query_replay(generate_stream(spec), queries, cfg, bank, "gate=never")
    assert [r["query_id"] for r in report.rows] == ["early", "late"]
    early = report.rows[0]
    assert early["frames_ingested"] == 10
    assert early["freeze_timestamp"] == 9.5
    for row in report.rows:
        assert row["max_selected_timestamp"] <= row["freeze_timestamp"]


def test_replay_stage1_forwards_whole_memory():
    spec = planted_spec(frames=30)
    bank = aligned_bank(spec)
    cfg = TierConfig(short_cap_frames=4, mid_cap_frames=8, token_budget=128,
                     long_quota_per_frame=4, tokens_per_frame_max=8)
    q = query_for_event(spec, 0, jitter=0.0, rho=2.0)
    report = run_query_replay(generate_stream(spec), [q], cfg, bank, "stage=s1")
    row = report.rows[0]
    result = row["result"]
    assert result["gated_short_only"] is False
    assert result["frame_scores"] == []
    # Anchor plus retrieved covers every frame still held in memory.
    ingest = run_ingest(generate_stream(spec), cfg, bank)
    held = ingest.summary["final_short_frames"] + ingest.summary["final_mid_frames"] \
        + ingest.summary["final_long_frames"]
    assert len(row["selected_frames"]) == held


def test_replay_stage2_fifo_ignores_compression_and_budget():
    spec = StreamSpec(dim=8, frames=10, tokens_per_frame=4, noise_sigma=0.2, rng_seed=6)
    bank = ProbeBank.generated(8, n=4, seed=1)
    cfg = TierConfig(short_cap_frames=2, mid_cap_frames=2, token_budget=8,
                     tokens_per_frame_max=4)
    q = query([axis(8, 0)], arrival=9.0, k=3)
    report = run_query_replay(generate_stream(spec), [q], cfg, bank, "gate=never,stage=s2")
    row = report.rows[0]
    # All 8 pre-short frames stay scoreable: nothing was pruned or evicted.
    assert len(row["result"]["frame_scores"]) == 8
    assert row["result"]["anchor_frames"] == [8, 9]


def test_replay_stage2_recalls_distant_event_exactly():
    spec = planted_spec(dim=16, frames=20, tpf=4, event_frame=3, sigma=0.0)
    bank = aligned_bank(spec)
    cfg = TierConfig(short_cap_frames=2, mid_cap_frames=2, token_budget=8,
                     tokens_per_frame_max=4)
    q = query_for_event(spec, 0, jitter=0.0, rho=2.0, top_k=1)
    report = run_query_replay(generate_stream(spec), [q], cfg, bank, "gate=never,stage=s2")
    assert report.rows[0]["recall"] == 1.0


def test_replay_compare_oracle_agrees_without_compression():
    spec = planted_spec(dim=16, frames=24, tpf=8, event_frame=5, sigma=0.3, seed=13)
    bank = aligned_bank(spec)
    cfg = no_compression_config(spec.frames, spec.tokens_per_frame)
    q = query_for_event(spec, 0, jitter=0.0, rho=2.0, top_k=1)
    report = run_query_replay(
        generate_stream(spec), [q], cfg, bank, "gate=never", compare_oracle=True
    )
    row = report.rows[0]
    assert row["oracle_top_k"] == [5]
    assert row["oracle_overlap"] == 1.0
    assert row["rank_correlation"] is not None
    assert row["rank_correlation"] > 0.99
    assert report.summary["mean_oracle_overlap"] == 1.0


def test_replay_rejects_bad_variant_and_pooling():
    bank = ProbeBank.generated(8, n=3, seed=0)
    with pytest.raises(UnknownVariant):
        run_query_replay([], [], TierConfig(), bank, "stage=s9")
    with pytest.raises(UnknownVariant):
        run_query_replay([], [], TierConfig(), bank, gate_pooling="median")


def test_replay_empty_queries():
    bank = ProbeBank.generated(8, n=3, seed=0)
    report = run_query_replay([], [], TierConfig(), bank)
    assert report.rows == ()
    assert report.summary["mean_recall"] is None
    assert report.summary["gated_fraction"] is None


def test_replay_is_deterministic_modulo_timings():
    spec = planted_spec(dim=16, frames=20, tpf=4, event_frame=4, sigma=0.2)
    bank = aligned_bank(spec)
    cfg = TierConfig(short_cap_frames=2, mid_cap_frames=4, token_budget=24,
                     tokens_per_frame_max=4)
    queries = [query_for_event(spec, 0, jitter=0.1, rng_seed=s, rho=2.0, query_id=f"q{s}")
               for s in range(3)]
    runs = [
        run_query_replay(generate_stream(spec), queries, cfg, bank, compare_oracle=True)
        for _ in range(2)
    ]
    assert report_json(runs[0], include_timings=False) == report_json(runs[1], include_timings=False)


# -- run_growth_sweep -------------------------------------------------------


def test_growth_sweep_rows_and_csv():
    bank = ProbeBank.generated(16, n=5, seed=0)
    cfg = TierConfig(short_cap_frames=2, mid_cap_frames=4, token_budget=64,
                     tokens_per_frame_max=8, scene_threshold=-0.5)
    report = run_growth_sweep([2, 4, 8, 16], cfg, bank, seed=5, tokens_per_frame=8)
    assert [r["length"] for r in report.rows] == [2, 4, 8, 16]
    finals = [r["final_tokens"] for r in report.rows]
    assert all(f <= cfg.token_budget for f in finals)
    assert finals == sorted(finals)
    for row in report.rows:
        assert row["peak_tokens"] >= row["final_tokens"]
    csv = sweep_csv(report)
    lines = csv.splitlines()
    assert lines[0] == "length,final_tokens,peak_tokens"
    assert len(lines) == 5
    assert lines[1] == f"2,{report.rows[0]['final_tokens']},{report.rows[0]['peak_tokens']}"


def test_growth_sweep_validates_lengths():
    bank = ProbeBank.generated(8, n=3, seed=0)
    with pytest.raises(EmptyInputError):
        run_growth_sweep([], TierConfig(), bank)
    with pytest.raises(ValidationError):
        run_growth_sweep([4, 2], TierConfig(), bank)
    with pytest.raises(ValidationError):
        run_growth_sweep([0, 2], TierConfig(), bank)


# -- emit_score_histograms --------------------------------------------------


def hist_config(tpf):
    return TierConfig(short_cap_frames=2, mid_cap_frames=4,
                      token_budget=max(64, 4 * tpf), tokens_per_frame_max=tpf)


def test_histograms_planted_block_right_skew():
    spec = planted_spec(dim=32, frames=24, tpf=16, event_frame=9, sigma=0.25, seed=3)
    bank = aligned_bank(spec)
    report = emit_score_histograms(generate_stream(spec), hist_config(16), bank, bins=10)
    assert report.summary["designated_frame"] == 9
    assert report.summary["token_mean"] > report.summary["token_median"]
    assert report.summary["token_right_skewed"] is True
    assert report.summary["token_count"] == 16
    assert report.summary["frame_count"] == 24
    token_rows = [r for r in report.rows if r["level"] == "token"]
    assert len(token_rows) == 10
    assert sum(r["count"] for r in token_rows) == 16
    csv = histogram_csv(report, "token")
    assert len(csv.splitlines()) == 11
    assert csv.splitlines()[0] == "lo,hi,count"


def test_histograms_degenerate_single_bin():
    spec = StreamSpec(dim=8, frames=6, tokens_per_frame=4, noise_sigma=0.0, rng_seed=2)
    bank = ProbeBank.generated(8, n=3, seed=0)
    report = emit_score_histograms(generate_stream(spec), hist_config(4), bank, bins=12)
    token_rows = [r for r in report.rows if r["level"] == "token"]
    frame_rows = [r for r in report.rows if r["level"] == "frame"]
    assert len(token_rows) == 1
    assert len(frame_rows) == 1
    assert token_rows[0]["count"] == 4
    assert token_rows[0]["lo"] == token_rows[0]["hi"]
    assert len(histogram_csv(report, "token").splitlines()) == 2


def test_histograms_frame_override_and_validation():
    spec = StreamSpec(dim=8, frames=5, tokens_per_frame=4, noise_sigma=0.3, rng_seed=8)
    bank = ProbeBank.generated(8, n=3, seed=0)
    frames = generate_stream(spec)
    report = emit_score_histograms(frames, hist_config(4), bank, bins=4, frame_index=2)
    assert report.summary["designated_frame"] == 2
    with pytest.raises(ValidationError):
        emit_score_histograms(frames, hist_config(4), bank, frame_index=99)
    with pytest.raises(ValidationError):
        emit_score_histograms(frames, hist_config(4), bank, bins=0)
    with pytest.raises(EmptyInputError):
        emit_score_histograms([], hist_config(4), bank)
    with pytest.raises(ValidationError):
        histogram_csv(report, "pooled")


# -- report plumbing --------------------------------------------------------


def test_report_json_is_canonical_and_writable(tmp_path):
    report = RunReport(
        kind="demo",
        config={"b": 2, "a": 1},
        seeds={"seed": 0},
        variant=None,
        inputs={},
        rows=({"x": 1.5},),
        summary={"ok": True},
        timings={"wall_seconds": 0.25},
    )
    text = report_json(report)
    assert text.endswith("\n")
    doc = json.loads(text)
    assert doc["config"] == {"a": 1, "b": 2}
    assert doc["timings"] == {"wall_seconds": 0.25}
    path = tmp_path / "report.json"
    write_report(report, path)
    assert path.read_text() == text
    assert json.loads(report_json(report, include_timings=False)).get("timings") is None
