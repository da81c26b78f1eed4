"""Command-line entry point: ``unmixx <subcommand> ...``.

Data goes to files or stdout; logs go to stderr. Exit codes: 0 success,
1 validation / usage error, 2 a failed check (grad-check, selftest).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import losses, metrics, mim
from .audio import AudioClip, StftConfig, read_wav, write_wav
from .separator import SeparatorConfig, SeparatorWeights, ideal_ratio_masks, separate

logger = logging.getLogger("unmixx")

EXIT_OK, EXIT_USAGE, EXIT_CHECK = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags; 2 is reserved for failed checks here
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _existing_file(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {path}")
    return p


def _existing_dir(path: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise UsageError(f"no such directory: {path}")
    return p


def _out_parent(path: str) -> Path:
    p = Path(path)
    if not p.parent.exists():
        raise UsageError(f"output directory does not exist: {p.parent}")
    return p


def _ratios(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise UsageError(f"bad ratio list {text!r}") from e
    if not vals or any(not 0.0 <= v <= 1.0 for v in vals):
        raise UsageError("ratios must lie in [0, 1]")
    return vals


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([f"{v:.10g}" if isinstance(v, float) else v for v in r])


def _dump_json(obj, path=None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def effective_config() -> dict:
    return {
        "version": __version__,
        "separator": SeparatorConfig().to_dict(),
        "loss": {
            "lambda_mag": losses.LossWeights().lambda_mag,
            "lambda_penalty": losses.LossWeights().lambda_penalty,
            "eps": losses.LossWeights().eps,
            "tau_max": losses.TAU_MAX,
            "tau_min": losses.TAU_MIN,
            "compression": 0.5,
            "tau_domain": "compressed",
        },
        "metrics": {
            "seg_s": 1.0,
            "segment_clamp_db": [metrics.SEG_FLOOR_DB, metrics.SEG_CEIL_DB],
            "cap_db": metrics.CAP_DB,
        },
        "mim": {
            "M": mim.POOL_M,
            "m": mim.KEEP_M,
            "tempo_tolerance_bpm": mim.TEMPO_TOL_BPM,
            "n_overtones": mim.N_OVERTONES,
            "tol_cents": mim.TOL_CENTS,
        },
        "threads": os.cpu_count() or 1,
    }


# --- subcommands ---


def cmd_mix(args) -> int:
    corpus = _existing_dir(args.corpus)
    ann = _existing_dir(args.annotations)
    out = Path(args.out)
    if args.count < 1 or args.length_s <= 0:
        raise UsageError("count must be >= 1 and length-s positive")
    out.mkdir(parents=True, exist_ok=True)
    songs = mim.load_corpus(corpus, ann, args.sample_rate)
    if len(songs) < 2:
        raise UsageError("corpus needs at least two songs")
    logger.info("loaded %d songs", len(songs))
    entries = []
    produced = mim.mix_corpus(songs, args.count, args.length_s, args.B, args.M, args.m, args.seed, args.tolerance_bpm)
    for i, (pair, mix, gt1, gt2) in enumerate(produced):
        names = {k: f"{k}_{i:04d}.wav" for k in ("mix", "gt1", "gt2")}
        for key, clip in (("mix", mix), ("gt1", gt1), ("gt2", gt2)):
            write_wav(out / names[key], clip)
        entries.append({"index": i, **pair.to_dict(), "files": names})
    manifest = {
        "seed": args.seed,
        "count": args.count,
        "length_s": args.length_s,
        "B": args.B,
        "M": args.M,
        "m": args.m,
        "tolerance_bpm": args.tolerance_bpm,
        "pairs": entries,
    }
    _dump_json(manifest, out / "manifest.json")
    logger.info("wrote %d mixtures to %s", len(entries), out)
    return EXIT_OK


def _song_f0(ann_path: Path, wav: str | None):
    ann = mim.load_annotation(ann_path)
    if ann.get("f0"):
        return mim.F0Track(ann["f0"]["values"], float(ann["f0"].get("hop_s", 0.01)))
    if wav is None:
        raise UsageError(f"{ann_path} has no f0 track; pass the matching audio to estimate one")
    return mim.estimate_f0(read_wav(_existing_file(wav)))


def cmd_score_harmonic(args) -> int:
    fa = _song_f0(_existing_file(args.a), args.a_wav)
    fb = _song_f0(_existing_file(args.b), args.b_wav)
    score = mim.harmonic_overlap_score(fa, fb, args.n_overtones, args.tol_cents)
    print(f"{score:.6f}")
    return EXIT_OK


def cmd_separate(args) -> int:
    src = _existing_file(args.inp)
    out1, out2 = _out_parent(args.out1), _out_parent(args.out2)
    cfg = SeparatorConfig.load(_existing_file(args.config)) if args.config else SeparatorConfig()
    cfg = SeparatorConfig(cfg.stft, cfg.scheme, cfg.n_channels, cfg.heads, cfg.embed_per_head, cfg.repeats,
                          args.seed, cfg.sample_rate)
    mix = read_wav(src, cfg.sample_rate)
    masks = None
    if args.ideal:
        gt1, gt2 = (read_wav(_existing_file(p), cfg.sample_rate) for p in args.ideal)
        if len(gt1) != len(mix) or len(gt2) != len(mix):
            raise UsageError("ideal references must match the mixture length")
        masks = ideal_ratio_masks(gt1, gt2, cfg.stft)
        logger.info("oracle path: ideal ratio masks")
    weights = SeparatorWeights.load(_existing_file(args.weights), cfg) if args.weights else None
    est1, est2 = separate(mix, cfg, weights, masks)
    write_wav(out1, est1)
    write_wav(out2, est2)
    return EXIT_OK


def _load_manifest(path: Path) -> list[dict]:
    items = json.loads(path.read_text())
    if isinstance(items, dict):
        items = items.get("items", [])
    if not items:
        raise UsageError("empty manifest")
    for it in items:
        for key in ("id", "mix", "est", "gt", "same_singer"):
            if key not in it:
                raise UsageError(f"manifest item lacks {key!r}")
    return items


def cmd_eval(args) -> int:
    path = _existing_file(args.manifest)
    out = _out_parent(args.out)
    items = _load_manifest(path)
    base = path.parent

    def resolve(p):
        q = Path(p)
        return _existing_file(str(q if q.is_absolute() else base / q))

    jobs = [(it, resolve(it["mix"]), [resolve(p) for p in it["est"]], [resolve(p) for p in it["gt"]]) for it in items]

    def score(job):
        it, mix_p, est_p, gt_p = job
        mix = read_wav(mix_p)
        est = [read_wav(p) for p in est_p]
        gt = [read_wav(p) for p in gt_p]
        return metrics.evaluate_item(it["id"], mix, est, gt, bool(it["same_singer"]), args.seg_s)

    with ThreadPoolExecutor(max_workers=args.threads) as pool:
        scored = list(pool.map(score, jobs))
    report = metrics.MetricReport(scored)
    _dump_json(report.to_dict(), out)
    if args.csv:
        rows = report.csv_rows()
        _write_csv(_out_parent(args.csv), rows[0], rows[1:])
    logger.info("hssnr %.3f dB over %d items", report.aggregates()["hssnr"], len(scored))
    return EXIT_OK


def cmd_swap_sim(args) -> int:
    ratios = _ratios(args.ratios)
    out = _out_parent(args.out)
    if args.synthetic:
        from .synth import same_singer_pair

        gt1, gt2 = same_singer_pair(args.duration, args.seed)
    else:
        if not (args.gt1 and args.gt2):
            raise UsageError("pass --gt1 and --gt2, or --synthetic")
        gt1, gt2 = read_wav(_existing_file(args.gt1)), read_wav(_existing_file(args.gt2))
        if gt1.sample_rate != gt2.sample_rate or len(gt1) != len(gt2):
            raise UsageError("references differ in rate or length")
    rows = metrics.swap_table(gt1, gt2, ratios, args.seg_s, args.seed)
    _write_csv(out, metrics.SWAP_COLUMNS, [[r[c] for c in metrics.SWAP_COLUMNS] for r in rows])
    if args.figure:
        from .plotting import plot_swap_table

        plot_swap_table(rows, _out_parent(args.figure))
    return EXIT_OK


def cmd_grad_check(args) -> int:
    from .gradcheck import run_suite

    results = run_suite(args.seed, args.trials)
    for r in results:
        print(f"{r.name:20s} worst_rel_err={r.worst_rel_err:.3e} {'PASS' if r.passed else 'FAIL'}")
    worst = max(r.worst_rel_err for r in results)
    print(f"worst relative error: {worst:.3e}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK


def demo_inputs(f1: float, f2: float, duration: float, amplitude: float, sample_rate: int = 24000):
    from .synth import sine

    s1 = sine(f1, duration, amplitude, sample_rate)
    s2 = sine(f2, duration, amplitude, sample_rate)
    return AudioClip(s1.samples + s2.samples, sample_rate), s1, s2


def cmd_demo_penalty(args) -> int:
    out = _out_parent(args.out)
    if args.steps < 0:
        raise UsageError("steps must be >= 0")
    mix, s1, s2 = demo_inputs(args.f1, args.f2, args.duration, args.amplitude)
    weights = losses.LossWeights(args.lambda_mag, args.lambda_penalty)
    cfg = losses.ObjectiveConfig(weights, losses.DEMO_STFT, tau_domain=args.tau_domain)
    traj = losses.optimize_masks_demo(mix, s1, s2, weights, args.steps, args.lr, cfg, args.penalty_from_step)
    _write_csv(out, losses.DemoStep.FIELDS, [r.row() for r in traj])
    runs = {f"lambda_penalty={args.lambda_penalty:g}": traj}
    summary = {"final": dict(zip(losses.DemoStep.FIELDS, traj[-1].row()))}
    if args.compare:
        base_w = losses.LossWeights(args.lambda_mag, 0.0)
        base = losses.optimize_masks_demo(mix, s1, s2, base_w, args.steps, args.lr,
                                          losses.ObjectiveConfig(base_w, losses.DEMO_STFT, tau_domain=args.tau_domain))
        runs["lambda_penalty=0"] = base
        summary["baseline_final"] = dict(zip(losses.DemoStep.FIELDS, base[-1].row()))
        e = traj[-1].masked_energy
        summary["energy_reduction"] = base[-1].masked_energy / e if e > 0 else float("inf")
        summary["snr_term_gap_db"] = abs(base[-1].snr_term - traj[-1].snr_term)
    _dump_json(summary)
    if args.figure:
        from .plotting import plot_demo_trajectories

        plot_demo_trajectories(runs, _out_parent(args.figure))
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run_checks

    checks = run_checks(args.seed)
    width = max(len(c.name) for c in checks)
    for c in checks:
        print(f"{c.name:{width}s}  {'PASS' if c.passed else 'FAIL'}  {c.detail}")
    return EXIT_OK if all(c.passed for c in checks) else EXIT_CHECK


# --- parser ---


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="unmixx", description="Two-singer separation toolkit: mixing, separation, losses, metrics.")
    p.add_argument("--version", action="version", version=f"unmixx {__version__}")
    p.add_argument("--config", choices=["dump"], help="'dump' prints the effective configuration as JSON")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="cap on parallel workers")
    p.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    seed = _Parser(add_help=False)
    seed.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("mix", parents=[seed], help="build correlated two-singer training mixtures")
    s.add_argument("--corpus", required=True)
    s.add_argument("--annotations", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, default=100)
    s.add_argument("--length-s", type=float, default=4.0)
    s.add_argument("--B", type=int, default=8)
    s.add_argument("--M", type=int, default=mim.POOL_M)
    s.add_argument("--m", type=int, default=mim.KEEP_M)
    s.add_argument("--tolerance-bpm", type=float, default=mim.TEMPO_TOL_BPM)
    s.add_argument("--sample-rate", type=int, default=24000)
    s.set_defaults(func=cmd_mix)

    s = sub.add_parser("score-harmonic", help="harmonic-overlap score of two annotated songs")
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.add_argument("--a-wav")
    s.add_argument("--b-wav")
    s.add_argument("--n-overtones", type=int, default=mim.N_OVERTONES)
    s.add_argument("--tol-cents", type=float, default=mim.TOL_CENTS)
    s.set_defaults(func=cmd_score_harmonic)

    s = sub.add_parser("separate", parents=[seed], help="separate a mixture into two singers")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out1", required=True)
    s.add_argument("--out2", required=True)
    s.add_argument("--config")
    s.add_argument("--weights")
    s.add_argument("--ideal", nargs=2, metavar=("GT1", "GT2"))
    s.set_defaults(func=cmd_separate)

    s = sub.add_parser("eval", help="score separated items listed in a manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--csv")
    s.add_argument("--seg-s", type=float, default=1.0)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("swap-sim", parents=[seed], help="score references with segments swapped")
    s.add_argument("--gt1")
    s.add_argument("--gt2")
    s.add_argument("--synthetic", action="store_true", help="use a synthetic same-singer pair")
    s.add_argument("--duration", type=float, default=10.0)
    s.add_argument("--ratios", default="0.1,0.2,0.3,0.4,0.5")
    s.add_argument("--seg-s", type=float, default=1.0)
    s.add_argument("--out", required=True)
    s.add_argument("--figure")
    s.set_defaults(func=cmd_swap_sim)

    s = sub.add_parser("grad-check", parents=[seed], help="finite-difference check of all loss gradients")
    s.add_argument("--trials", type=int, default=100)
    s.set_defaults(func=cmd_grad_check)

    s = sub.add_parser("demo-penalty", help="mask optimisation on a two-sine mixture")
    s.add_argument("--out", required=True)
    s.add_argument("--lambda-penalty", type=float, default=losses.LossWeights().lambda_penalty)
    s.add_argument("--lambda-mag", type=float, default=losses.LossWeights().lambda_mag)
    s.add_argument("--steps", type=int, default=500)
    s.add_argument("--lr", type=float, default=0.05)
    s.add_argument("--penalty-from-step", type=int, default=0)
    s.add_argument("--tau-domain", choices=["compressed", "raw"], default="compressed")
    s.add_argument("--f1", type=float, default=440.0)
    s.add_argument("--f2", type=float, default=3000.0)
    s.add_argument("--duration", type=float, default=1.0)
    s.add_argument("--amplitude", type=float, default=0.5)
    s.add_argument("--compare", action="store_true", help="also run lambda_penalty = 0 and report the ratio")
    s.add_argument("--figure")
    s.set_defaults(func=cmd_demo_penalty)

    s = sub.add_parser("selftest", parents=[seed], help="run the invariant suite on synthetic signals")
    s.set_defaults(func=cmd_selftest)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"unmixx: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    logging.basicConfig(level=args.log_level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    if args.config == "dump":
        _dump_json(effective_config())
        return EXIT_OK
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    if args.threads < 1:
        print("unmixx: error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, ValueError, FileNotFoundError) as e:
        logger.error("%s", e)
        return EXIT_USAGE


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
