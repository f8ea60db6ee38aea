"""Command-line entry point.

Commands: sample, train, eval, ablate, sweep, orient, synth, spec-echo.
Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric
failure. --threads 0 pins the math libraries to one thread for strict
run-to-run determinism, which is why heavyweight imports happen only
after the thread limit is in place.
"""

import argparse
import json
import sys
from pathlib import Path

_THREAD_LIMIT = None  # keep the threadpoolctl handle alive


def _limit_threads(n: int):
    global _THREAD_LIMIT
    limit = 1 if n == 0 else n
    try:
        from threadpoolctl import threadpool_limits
        _THREAD_LIMIT = threadpool_limits(limits=limit)
    except ImportError:
        import os
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(limit)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        from .errors import ConfigError
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="ppcnet", description=__doc__)
    parser.add_argument("--threads", type=int, default=None, dest="threads_global",
                        help="math thread count; 0 = strict single-threaded deterministic")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None,
                        help="math thread count; 0 = strict single-threaded deterministic")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add_parser(name, **kwargs):
        return sub.add_parser(name, parents=[common], **kwargs)

    p = add_parser("sample", help="sample meshes into cached point-cloud files")
    p.add_argument("--mesh-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--points", type=int, default=32768)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dump-neighbors", type=int, default=0, metavar="K",
                   help="debug: also dump each cloud's spatial k-NN table as CSV")

    p = add_parser("train", help="train a model per a run config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", default=None, help="override the config output directory")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")

    p = add_parser("eval", help="evaluate a checkpoint on the configured test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)

    p = add_parser("ablate", help="run the component-omission grid")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)

    p = add_parser("sweep", help="train at several input point counts")
    p.add_argument("--config", required=True)
    p.add_argument("--sizes", required=True, help="comma-separated input sizes")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)

    p = add_parser("orient", help="front/back/abstain for one tablet mesh")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mesh", required=True)
    p.add_argument("--seed", type=int, default=0)

    p = add_parser("synth", help="write a synthetic mesh corpus plus manifest")
    p.add_argument("--task", required=True,
                   choices=("period", "seal", "left_sign", "front"))
    p.add_argument("--per-class", type=int, default=25)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)

    p = add_parser("spec-echo", help="print the standard network spec for audit")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--points", type=int, default=32768)
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = _build_parser()
    from .errors import ConfigError, DataError, NumericError
    try:
        args = parser.parse_args(argv)
        threads = args.threads if args.threads is not None else args.threads_global
        _limit_threads(threads if threads is not None else 0)
        handler = {
            "sample": cmd_sample, "train": cmd_train, "eval": cmd_eval,
            "ablate": cmd_ablate, "sweep": cmd_sweep, "orient": cmd_orient,
            "synth": cmd_synth, "spec-echo": cmd_spec_echo,
        }[args.command]
        return handler(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


def _load_run(args):
    from .config import load_config
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
        cfg.training.seed = args.seed
    if getattr(args, "out", None) is not None:
        cfg.out_dir = args.out
    return cfg


def cmd_sample(args) -> int:
    import numpy as np

    from .meshio import load_mesh
    from .neighbors import knn_spatial
    from .pointcloud import normalize, sample_surface, save_cloud
    from .rng import derive_rng
    from .datasets import stable_hash

    mesh_dir = Path(args.mesh_dir)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = sorted(list(mesh_dir.glob("*.ply")) + list(mesh_dir.glob("*.obj")))
    if not paths:
        print(f"warning: no meshes found in {mesh_dir}")
        return 0
    failures = []
    written = skipped = 0
    for path in paths:
        target = out_dir / (path.stem + ".ppc")
        sidecar = target.with_suffix(target.suffix + ".json")
        provenance = {"source": str(path), "seed": args.seed,
                      "n_points": args.points, "normalized": True}
        if target.exists() and sidecar.exists():
            try:
                on_disk = json.loads(sidecar.read_text())
            except json.JSONDecodeError:
                on_disk = None
            if on_disk == provenance and target.stat().st_mtime >= path.stat().st_mtime:
                skipped += 1
                continue
        try:
            mesh = load_mesh(path)
            rng = derive_rng(args.seed, stable_hash(path.stem))
            cloud = normalize(sample_surface(mesh, args.points, rng))
            save_cloud(cloud, target, provenance=provenance)
            written += 1
            if args.dump_neighbors > 0:
                nbrs = knn_spatial(cloud.positions, args.dump_neighbors, 1)
                lines = ["point_index,rank,neighbor_index,distance"]
                for i, row in enumerate(nbrs.indices):
                    for rank, j in enumerate(row, start=1):
                        d = float(np.linalg.norm(cloud.positions[i] - cloud.positions[j]))
                        lines.append(f"{i},{rank},{j},{d!r}")
                (out_dir / (path.stem + ".neighbors.csv")).write_text("\n".join(lines) + "\n")
        except Exception as exc:  # collect and keep going
            failures.append((path.name, str(exc)))
    print(f"sampled {written}, skipped {skipped} up-to-date, {len(failures)} failed")
    for name, msg in failures:
        print(f"  failed {name}: {msg}", file=sys.stderr)
    return 2 if failures else 0


def cmd_train(args) -> int:
    from .checkpoint import load_checkpoint, save_checkpoint
    from .config import build_dataset, resolve_network
    from .network import build_network
    from .rng import make_rng
    from .training import train

    cfg = _load_run(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset = build_dataset(cfg)
    spec = resolve_network(cfg, dataset)
    cfg.network = spec
    (out / "config-echo.json").write_text(cfg.to_json())

    start_epoch = 0
    velocity = None
    rng = None
    if args.resume:
        ck = load_checkpoint(args.resume)
        if ck.model.spec != spec:
            from .errors import ConfigError
            raise ConfigError("checkpoint spec does not match the config spec")
        model = ck.model
        start_epoch = ck.epoch
        velocity = ck.velocity
        rng = ck.rng
    else:
        model = build_network(spec, make_rng(cfg.seed))

    params = cfg.training
    every = params.checkpoint_every

    def periodic(epoch, mdl, vel, stream, _history):
        if every > 0 and (epoch + 1) % every == 0 and epoch + 1 < params.epochs:
            save_checkpoint(out / f"checkpoint-epoch{epoch + 1:04d}.ppck", mdl,
                            epoch=epoch + 1, velocity=vel, rng=stream,
                            train_params=params.to_dict())

    if rng is None:
        rng = make_rng(params.seed)
    if velocity is None:
        velocity = {}
    model, history = train(model, dataset, params, rng=rng, velocity=velocity,
                           start_epoch=start_epoch, epoch_callback=periodic)
    (out / "history.csv").write_text(history.to_csv())
    save_checkpoint(out / "checkpoint.ppck", model, epoch=params.epochs,
                    velocity=velocity, rng=rng, train_params=params.to_dict())
    final = history.epochs[-1] if history.epochs else None
    if final is not None:
        print(f"trained {len(history.epochs)} epochs; final loss {final.loss:.6f}, "
              f"train accuracy {final.train_acc:.4f}")
    print(f"wrote {out / 'checkpoint.ppck'}")
    return 0


def cmd_eval(args) -> int:
    from .checkpoint import load_checkpoint
    from .config import build_dataset, resolve_network
    from .errors import ConfigError
    from .harness import evaluate, render_pr_curve, report_row, rows_to_csv, write_report

    cfg = _load_run(args)
    out = Path(cfg.out_dir)
    dataset = build_dataset(cfg)
    ck = load_checkpoint(args.checkpoint)
    spec = resolve_network(cfg, dataset)
    if ck.model.spec != spec:
        raise ConfigError("checkpoint spec does not match the config spec")
    report = evaluate(ck.model, dataset, seed=cfg.seed)
    write_report(report, out, "report", seed=cfg.seed)
    if dataset.num_classes == 2:
        scores = [r["scores"][1] for r in report.records]
        truth = [r["truth"] for r in report.records]
        render_pr_curve(scores, truth, out / "pr-curve.svg")
    print(rows_to_csv([report_row(report, "base", cfg.seed)]), end="")
    return 0


def cmd_ablate(args) -> int:
    from .config import build_dataset, resolve_network
    from .harness import ablation_grid, render_bars, report_row, rows_to_csv, write_report

    cfg = _load_run(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset = build_dataset(cfg)
    spec = resolve_network(cfg, dataset)
    reports = ablation_grid(spec, cfg.training, dataset, seed=cfg.seed)
    rows = []
    for omit, report in reports.items():
        write_report(report, out, f"ablation-{omit}", variant=omit, seed=cfg.seed)
        rows.append(report_row(report, omit, cfg.seed))
    (out / "ablation.csv").write_text(rows_to_csv(rows))
    render_bars([r["variant"] for r in rows], [r["macro_f1"] for r in rows],
                out / "ablation-bars.svg", title="macro F1 by omitted component")
    print(rows_to_csv(rows), end="")
    return 0


def cmd_sweep(args) -> int:
    from dataclasses import replace

    from .config import build_dataset
    from .harness import point_sweep, render_bars, report_row, rows_to_csv, write_report

    cfg = _load_run(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sizes = [int(s) for s in args.sizes.split(",") if s]

    def factory(size):
        sized = replace(cfg, task=replace(cfg.task, n_points=size))
        return build_dataset(sized)

    first = factory(sizes[0]) if sizes else None
    num_classes = first.num_classes if first is not None else 2
    reports = point_sweep(sizes, factory, cfg.training, num_classes, seed=cfg.seed)
    rows = []
    for size, report in sorted(reports.items()):
        write_report(report, out, f"sweep-{size}", variant=str(size), seed=cfg.seed)
        rows.append(report_row(report, str(size), cfg.seed))
    (out / "sweep.csv").write_text(rows_to_csv(rows))
    render_bars([r["variant"] for r in rows], [r["macro_f1"] for r in rows],
                out / "sweep-bars.svg", title="macro F1 by input size")
    print(rows_to_csv(rows), end="")
    return 0


def cmd_orient(args) -> int:
    import numpy as np

    from .checkpoint import load_checkpoint
    from .harness import softmax
    from .meshio import load_mesh
    from .metrics import agreement_predict
    from .network import forward
    from .pointcloud import normalize, rotate_x_180, sample_surface
    from .rng import derive_rng

    ck = load_checkpoint(args.checkpoint)
    spec = ck.model.spec
    if spec.num_classes != 2:
        from .errors import ConfigError
        raise ConfigError("orient needs a checkpoint trained on the "
                          "two-class front-orientation task")
    mesh = load_mesh(args.mesh)
    cloud = normalize(sample_surface(mesh, spec.input_points, derive_rng(args.seed, 1)))
    flipped = rotate_x_180(cloud)
    logits_a = forward(ck.model, cloud, mode="eval", rng=derive_rng(args.seed, 2)).data.ravel()
    logits_b = forward(ck.model, flipped, mode="eval", rng=derive_rng(args.seed, 3)).data.ravel()
    decision = agreement_predict(logits_a, logits_b)
    label = {1: "front", 0: "back", None: "abstain"}[decision]
    pa = softmax(logits_a)
    pb = softmax(logits_b)
    print(f"{label}")
    print(f"view-as-captured scores: back={pa[0]:.4f} front={pa[1]:.4f}")
    print(f"view-flipped scores:     back={pb[0]:.4f} front={pb[1]:.4f}")
    return 0


def cmd_synth(args) -> int:
    from .datasets import Manifest, ManifestRow, save_manifest
    from .meshio import save_obj
    from .rng import derive_rng
    from .synth import SYNTH_TASKS, _task_mesh

    if args.task not in SYNTH_TASKS:
        from .errors import ConfigError
        raise ConfigError(f"unknown task {args.task!r}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = derive_rng(args.seed, 21)
    rows = []
    num_classes = 4 if args.task == "period" else (1 if args.task == "front" else 2)
    for label in range(num_classes):
        for i in range(args.per_class):
            name = f"synth-{args.task}-{label}-{i:04d}"
            mesh = _task_mesh(args.task, label if args.task != "front" else 1, rng, name)
            mesh_path = out / f"{name}.obj"
            save_obj(mesh, mesh_path)
            row = ManifestRow(mesh_path=str(mesh_path), tablet_id=name)
            if args.task == "period":
                row.period = f"p{label}"
            elif args.task == "seal":
                row.seal = label
            elif args.task == "left_sign":
                row.left_sign = label
            else:
                row.front_eligible = 1
            rows.append(row)
    manifest = Manifest(rows)
    manifest.validate()
    save_manifest(manifest, out / "manifest.csv")
    print(f"wrote {len(rows)} meshes and {out / 'manifest.csv'}")
    return 0


def cmd_spec_echo(args) -> int:
    from .network import default_spec

    spec = default_spec(args.classes, input_points=args.points)
    print(json.dumps(spec.to_dict(), indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
