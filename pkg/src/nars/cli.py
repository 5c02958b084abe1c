"""Command line entry points.

Seven subcommands share one shape: parse and validate the config up front,
compute, then publish an atomic artifact directory containing the outputs
plus ``resolved.ini``, a fully-materialized config (defaults included) whose
re-run reproduces the artifacts bit for bit. Timing columns (rtf) are the
one documented exception. Summaries go to stdout as ``key=value`` lines;
diagnostics go to the log (NARS_LOG=error|info|debug, stderr).

Exit codes: 0 ok, 1 configuration, 2 data, 3 numerical, 4 validity.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import logging
import math
import os
import sys
import time

import numpy as np

from . import config as cfg
from . import io
from .errors import ConfigurationError, DataError, NarsError
from .frontend import (
    AzimuthGrid,
    FilterBankSpec,
    aec_process,
    azimuth_error_deg,
    beamform_das,
    circular_array,
    das_weights,
    fb_analyze,
    fb_synthesize,
    make_aec,
    srp_localize,
)
from .rl import ACT_DIM, OBS_DIM, init_policy, train_tuning_policy
from .scene import (
    NOISE_KINDS,
    Metrics,
    ScenarioConfig,
    measure_rtf,
    render_scene,
    scene_rng,
    si_snr,
)
from .wavefield import (
    AxisymGrid,
    PlaneWaveGrid,
    TimeWaveform,
    analytic_gaussian_axis,
    gaussian_profile,
    harmonic_spectrum,
    rayleigh_distance,
    shock_formation_distance,
    simulate_kzk_axisym,
    simulate_westervelt_plane,
)

log = logging.getLogger("nars")

BENCH_BUCKETS = ("≤5 s", "5–10 s", "10–20 s", "20–30 s", "≥30 s")


def _bucket(duration: float) -> str:
    if duration <= 5.0:
        return BENCH_BUCKETS[0]
    if duration <= 10.0:
        return BENCH_BUCKETS[1]
    if duration <= 20.0:
        return BENCH_BUCKETS[2]
    if duration < 30.0:
        return BENCH_BUCKETS[3]
    return BENCH_BUCKETS[4]


def _summary(key: str, value) -> None:
    print(f"{key}={io.fmt_num(value) if not isinstance(value, str) else value}")


def _localize_window(n: int) -> int:
    return min(n, 8192)


# === subcommands ===


def cmd_wave(args) -> None:
    conf = cfg.load_config(args.config)
    medium = cfg.build_medium(conf)
    src = cfg.build_source(conf)
    n_time = conf.get_int("wave", "n_time", 512)
    n_steps = conf.get_int("wave", "n_steps", 200)
    n_harm = conf.get_int("wave", "n_harm", 4)
    z_max = conf.get_float("wave", "z_max", None)
    sigma_end = conf.get_float("wave", "sigma_end", None)
    cfg.effective_seed(conf, args.seed)
    conf.finish()
    if (z_max is None) == (sigma_end is None):
        raise ConfigurationError("[wave] needs exactly one of z_max or sigma_end")
    # a linear medium never shocks; it still makes sense with an explicit z_max
    x_shock = math.inf if medium.beta == 0 else shock_formation_distance(medium, src)
    if z_max is None:
        z_max = sigma_end * x_shock
    grid = PlaneWaveGrid(n_time=n_time, n_steps=n_steps, dz=z_max / n_steps, z_max=z_max)

    zs: list[float] = []
    ratio_rows: list[np.ndarray] = []

    def record(z, samples):
        zs.append(z)
        w = TimeWaveform(samples, fs=grid.n_time * src.f0)
        ratio_rows.append(harmonic_spectrum(w, src.f0, n_harm) / src.p0)

    final = simulate_westervelt_plane(medium, src, grid, n_harm_out=n_harm, callback=record)

    with io.ArtifactSet(args.out) as art:
        header = ["z"] + [f"B{n}" for n in range(1, n_harm + 1)]
        io.write_csv(
            art.path("harmonics.csv"),
            header,
            ([z] + list(row) for z, row in zip(zs, ratio_rows)),
        )
        t = np.arange(grid.n_time) / final.fs
        io.write_csv(art.path("waveform.csv"), ["t", "p"], zip(t, final.samples))
        conf.dump_resolved(art.path("resolved.ini"))

    _summary("shock_distance_m", x_shock)
    _summary("sigma_end", z_max / x_shock)
    for n in range(1, n_harm + 1):
        _summary(f"b{n}", float(ratio_rows[-1][n - 1]))


def cmd_kzk(args) -> None:
    conf = cfg.load_config(args.config)
    medium = cfg.build_medium(conf)
    src = cfg.build_source(conf)
    grid = AxisymGrid(
        n_r=conf.get_int("kzk", "n_r", 128),
        dr=conf.get_float("kzk", "dr"),
        n_z=conf.get_int("kzk", "n_z"),
        dz=conf.get_float("kzk", "dz"),
        n_harm=conf.get_int("kzk", "n_harm", 8),
    )
    a = conf.get_float("kzk", "source_radius")
    strang = conf.get_bool("kzk", "strang", False)
    cfg.effective_seed(conf, args.seed)
    conf.finish()

    zs: list[float] = []
    axis_rows: list[np.ndarray] = []

    def record(z, amps):
        zs.append(z)
        axis_rows.append(np.abs(amps[:, 0]))

    field = simulate_kzk_axisym(
        medium, src, gaussian_profile(a), grid, strang=strang, callback=record
    )

    with io.ArtifactSet(args.out) as art:
        header = ["z"] + [f"H{n}" for n in range(1, grid.n_harm + 1)]
        io.write_csv(
            art.path("axis.csv"), header, ([z] + list(row) for z, row in zip(zs, axis_rows))
        )
        io.write_field_dump(art.path("field.nfd"), field)
        conf.dump_resolved(art.path("resolved.ini"))

    _summary("rayleigh_m", rayleigh_distance(src, a, medium))
    _summary("p1_axis_end_pa", float(np.abs(field.amps[0, 0])))
    _summary("p1_linear_ref_pa", analytic_gaussian_axis(src, a, medium, field.z))


def _steered_frames(rendered, steer_deg: float | None, geom):
    """SRP estimate on a leading window, then DAS at the chosen azimuth."""
    window = rendered.mics[:, : _localize_window(rendered.mics.shape[1])]
    est_az, power = srp_localize(geom, window)
    az = est_az if steer_deg is None else steer_deg
    y = beamform_das(geom, das_weights(geom, az), rendered.mics)
    return y, est_az, power


def cmd_scene(args) -> None:
    conf = cfg.load_config(args.config)
    seed = cfg.effective_seed(conf, args.seed)
    scenario = cfg.build_scenario(conf, seed)
    conf.finish()
    geom = cfg.build_geometry(scenario)

    t0 = time.perf_counter()
    rendered = render_scene(scenario)
    elapsed = time.perf_counter() - t0
    window = rendered.mics[:, : _localize_window(rendered.mics.shape[1])]
    est_az, _ = srp_localize(geom, window)

    m = Metrics(
        scenario_id=f"scene-{seed}",
        si_snr_db=si_snr(rendered.clean_ref, rendered.mics[0]),
        snr_gain_db=0.0,
        rtf=measure_rtf(elapsed, scenario.duration),
        doa_err_deg=azimuth_error_deg(est_az, rendered.true_azimuth_deg),
    )
    with io.ArtifactSet(args.out) as art:
        io.write_wav(art.path("mics.wav"), rendered.fs, rendered.mics)
        io.write_wav(art.path("clean_ref.wav"), rendered.fs, rendered.clean_ref)
        if rendered.far_end is not None:
            io.write_wav(art.path("far_end.wav"), rendered.fs, rendered.far_end)
        row = m.row()
        io.write_csv(art.path("metrics.csv"), list(row.keys()), [list(row.values())])
        conf.dump_resolved(art.path("resolved.ini"))
    for key, value in m.row().items():
        _summary(key, value)


def cmd_frontend(args) -> None:
    conf = cfg.load_config(args.config)
    seed = cfg.effective_seed(conf, args.seed)
    scenario = cfg.build_scenario(conf, seed)
    params = cfg.build_frontend(conf)
    conf.finish()
    geom = cfg.build_geometry(scenario)
    spec = FilterBankSpec(m_bands=params.m_bands, hop=params.hop, fs=scenario.room.fs)

    rendered = render_scene(scenario)
    n = rendered.mics.shape[1]

    t0 = time.perf_counter()
    y, est_az, power = _steered_frames(rendered, params.steer_deg, geom)
    mic_state = fb_analyze(spec, y)
    erle_rows = []
    if rendered.far_end is not None:
        far_state = fb_analyze(spec, rendered.far_end)
        residual, _ = aec_process(
            make_aec(spec.m_bands, params.aec_taps, mu=params.mu), far_state, mic_state
        )
        p_mic = np.sum(np.abs(mic_state.bands) ** 2, axis=0)
        p_res = np.sum(np.abs(residual.bands) ** 2, axis=0)
        with np.errstate(divide="ignore"):
            trace = 10.0 * np.log10(p_mic / np.maximum(p_res, 1e-300))
        n_live = min(len(trace), -(-n // spec.hop))  # drop the flush tail
        erle_rows = [[k, f"{trace[k]:.6f}"] for k in range(n_live)]
    else:
        residual = mic_state
    enhanced = fb_synthesize(spec, residual)[:n]
    elapsed = time.perf_counter() - t0

    base = si_snr(rendered.clean_ref, rendered.mics[0])
    enh = si_snr(rendered.clean_ref, enhanced)
    m = Metrics(
        scenario_id=f"scene-{seed}",
        si_snr_db=enh,
        snr_gain_db=enh - base,
        rtf=measure_rtf(elapsed, scenario.duration),
        doa_err_deg=azimuth_error_deg(est_az, rendered.true_azimuth_deg),
    )
    with io.ArtifactSet(args.out) as art:
        io.write_wav(art.path("enhanced.wav"), rendered.fs, enhanced)
        io.write_csv(art.path("erle.csv"), ["frame", "erle_db"], erle_rows)
        grid = AzimuthGrid()
        io.write_csv(art.path("srp.csv"), ["angle_deg", "power"], zip(grid.angles, power))
        row = m.row()
        io.write_csv(art.path("metrics.csv"), list(row.keys()), [list(row.values())])
        conf.dump_resolved(art.path("resolved.ini"))
    for key, value in m.row().items():
        _summary(key, value)


def _localize_one(conf_snapshot, seed: int, index: int, explicit_pos):
    """Render scene ``index`` and localize it; pure function of (seed, index)."""
    room, mic_positions, noise_kind, snr_db, duration = conf_snapshot
    rng = scene_rng(seed, index)
    if explicit_pos is not None:
        pos = tuple(explicit_pos)
    else:
        margin = 0.5
        lo = np.full(3, margin)
        hi = np.asarray(room.dims) - margin
        if np.any(hi <= lo):
            raise ConfigurationError("room too small for a 0.5 m placement margin")
        pos = tuple(lo + (hi - lo) * rng.uniform(size=3))
    sub_seed = int(rng.integers(2**63))
    scenario = ScenarioConfig(
        room=room,
        source_pos=pos,
        mic_positions=mic_positions,
        noise_kind=noise_kind,
        snr_db=snr_db,
        seed=sub_seed,
        duration=duration,
    )
    rendered = render_scene(scenario)
    geom = cfg.build_geometry(scenario)
    window = rendered.mics[:, : _localize_window(rendered.mics.shape[1])]
    est_az, _ = srp_localize(geom, window)
    return rendered.true_azimuth_deg, est_az


def cmd_localize(args) -> None:
    conf = cfg.load_config(args.config)
    seed = cfg.effective_seed(conf, args.seed)
    room = cfg.build_room(conf)
    mic_positions = tuple(cfg.build_mic_positions(conf))
    noise_kind = conf.get_str("scene", "noise_kind", "white", choices=NOISE_KINDS)
    snr_db = conf.get_float("scene", "snr_db", 10.0)
    duration = conf.get_float("scene", "duration", 0.5)
    explicit_pos = conf.get_vec3("scene", "source_pos", None)
    n_scenes = conf.get_int("localize", "n_scenes", 1)
    conf.finish()
    if n_scenes < 1:
        raise ConfigurationError("[localize] n_scenes must be at least 1")
    if n_scenes > 1 and explicit_pos is not None:
        raise ConfigurationError("explicit source_pos only makes sense with n_scenes = 1")

    snapshot = (room, mic_positions, noise_kind, snr_db, duration)
    results: list[tuple[float, float] | None] = [None] * n_scenes
    if args.parallel > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=args.parallel) as pool:
            futures = {
                pool.submit(_localize_one, snapshot, seed, i, explicit_pos): i
                for i in range(n_scenes)
            }
            for fut in concurrent.futures.as_completed(futures):
                results[futures[fut]] = fut.result()
    else:
        for i in range(n_scenes):
            results[i] = _localize_one(snapshot, seed, i, explicit_pos)

    rows = []
    errs = []
    for i, (true_az, est_az) in enumerate(results):
        err = azimuth_error_deg(est_az, true_az)
        errs.append(err)
        rows.append([i, f"{true_az:.6f}", f"{est_az:.6f}", f"{err:.6f}"])

    with io.ArtifactSet(args.out) as art:
        io.write_csv(art.path("doa.csv"), ["scene", "true_az_deg", "est_az_deg", "err_deg"], rows)
        conf.dump_resolved(art.path("resolved.ini"))
    _summary("n_scenes", n_scenes)
    _summary("doa_err_deg", float(np.mean(errs)))
    _summary("doa_err_max_deg", float(np.max(errs)))


def cmd_train(args) -> None:
    conf = cfg.load_config(args.config)
    seed = cfg.effective_seed(conf, args.seed)
    scenario = cfg.build_scenario(conf, seed)
    rl = cfg.build_rl(conf)
    conf.finish()

    policy = init_policy(
        OBS_DIM,
        ACT_DIM,
        hidden=rl.hidden,
        v_hidden=rl.v_hidden,
        seed=seed,
        clip_eps=rl.clip_eps,
        lr=rl.lr,
        gamma=rl.gamma,
        lam=rl.lam,
        init_log_std=rl.init_log_std,
    )
    trained, curve = train_tuning_policy(
        [scenario],
        policy,
        rl.budget,
        seed=seed,
        weights=rl.weights,
        horizon=rl.horizon,
        chunk_seconds=rl.chunk_seconds,
        episodes_per_update=rl.episodes_per_update,
        epochs=rl.epochs,
        minibatch=rl.minibatch,
        env_kwargs=dict(
            init_steer_offset_deg=rl.init_steer_offset_deg,
            init_mu=rl.init_mu,
            m_bands=rl.m_bands,
            aec_taps=rl.aec_taps,
        ),
    )
    with io.ArtifactSet(args.out) as art:
        io.write_csv(
            art.path("curve.csv"),
            ["episode", "mean_reward", "clip_fraction", "mean_ratio"],
            ([r["episode"], r["mean_reward"], r["clip_fraction"], r["mean_ratio"]] for r in curve),
        )
        io.write_policy_vector(art.path("policy.npc"), trained.theta)
        conf.dump_resolved(art.path("resolved.ini"))
    _summary("episodes", len(curve))
    _summary("final_mean_reward", curve[-1]["mean_reward"])
    tail = [float(r["mean_reward"]) for r in curve[-max(1, len(curve) // 4) :]]
    _summary("tail_mean_reward", float(np.mean(tail)))


def cmd_bench(args) -> None:
    conf = cfg.load_config(args.config)
    seed = cfg.effective_seed(conf, args.seed)
    durations = conf.get_floats("bench", "durations", (3.0, 7.0, 15.0, 25.0, 35.0))
    fs = conf.get_float("bench", "fs", 16000.0)
    n_mics = conf.get_int("bench", "n_mics", 8)
    m_bands = conf.get_int("bench", "m_bands", 64)
    hop = conf.get_int("bench", "hop", m_bands // 2)
    aec_taps = conf.get_int("bench", "aec_taps", 4)
    conf.finish()
    if len(durations) == 0:
        raise DataError("bench corpus is empty: no durations configured")
    if any(d <= 0 for d in durations):
        raise ConfigurationError("[bench] durations must be positive")

    geom = circular_array(n_mics, 0.05, fs=fs)
    spec = FilterBankSpec(m_bands=m_bands, hop=hop, fs=fs)
    weights = das_weights(geom, 0.0)

    with io.ArtifactSet(args.out) as art:
        corpus = []
        for i, d in enumerate(durations):
            rng = scene_rng(seed, i)
            n = int(round(d * fs))
            mics = rng.standard_normal((n_mics, n)) * 0.1
            far = rng.standard_normal(n) * 0.1
            mic_path = art.path(f"corpus/scene_{i:03d}.wav")
            far_path = art.path(f"corpus/far_{i:03d}.wav")
            io.write_wav(mic_path, fs, mics)
            io.write_wav(far_path, fs, far)
            corpus.append((mic_path, far_path))
        log.info("bench corpus: %d scenes", len(corpus))

        per_bucket: dict[str, list[float]] = {}
        for mic_path, far_path in corpus:
            fs_r, mics = io.read_wav(mic_path)
            _, far = io.read_wav(far_path)
            duration = mics.shape[1] / fs_r
            t0 = time.perf_counter()
            y = beamform_das(geom, weights, mics)
            mic_state = fb_analyze(spec, y)
            far_state = fb_analyze(spec, far)
            residual, _ = aec_process(make_aec(m_bands, aec_taps), far_state, mic_state)
            fb_synthesize(spec, residual)
            elapsed = time.perf_counter() - t0
            rtf = measure_rtf(elapsed, duration)
            per_bucket.setdefault(_bucket(duration), []).append(rtf)
            log.debug("bench %s: %.1f s audio, rtf %.4f", mic_path, duration, rtf)

        rows = []
        for label in BENCH_BUCKETS:
            if label not in per_bucket:
                continue
            vals = np.asarray(per_bucket[label])
            rows.append([label, f"{vals.mean():.6f}", f"{np.percentile(vals, 95):.6f}"])
        io.write_csv(art.path("rtf.csv"), ["bucket", "mean_rtf", "p95_rtf"], rows)
        conf.dump_resolved(art.path("resolved.ini"))
    for label, mean_s, p95_s in rows:
        _summary(f"rtf_mean[{label}]", mean_s)


# === dispatch ===

_COMMANDS = {
    "wave": cmd_wave,
    "kzk": cmd_kzk,
    "scene": cmd_scene,
    "frontend": cmd_frontend,
    "localize": cmd_localize,
    "train": cmd_train,
    "bench": cmd_bench,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nars", description="nonlinear acoustics toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("wave", "plane-wave harmonic growth"),
        ("kzk", "axisymmetric beam march"),
        ("scene", "render a synthetic acoustic scene"),
        ("frontend", "run the multi-mic enhancement pipeline"),
        ("localize", "DOA estimation over rendered scenes"),
        ("train", "PPO tuning of the front end"),
        ("bench", "real-time-factor benchmark"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="INI config file")
        p.add_argument("--out", required=True, help="artifact output directory")
        p.add_argument("--seed", type=int, default=None, help="override the configured seed")
        p.add_argument("--parallel", type=int, default=1, help="worker threads where supported")
    return parser


def _setup_logging() -> None:
    level_name = os.environ.get("NARS_LOG", "info").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level_name not in levels:
        raise ConfigurationError(f"NARS_LOG must be error, info, or debug, not {level_name!r}")
    logging.basicConfig(
        level=levels[level_name], stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s"
    )


def main(argv=None) -> int:
    try:
        _setup_logging()
        args = _build_parser().parse_args(argv)
        if args.parallel < 1:
            raise ConfigurationError("--parallel must be at least 1")
        _COMMANDS[args.command](args)
    except NarsError as e:
        log.error("%s", e)
        return e.exit_code
    except OSError as e:
        log.error("%s", e)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
