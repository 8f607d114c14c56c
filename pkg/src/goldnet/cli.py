"""Command-line front end for the experiment suite.

Configuration precedence: command-line flags > config file (flat
``key = value`` lines, '#' comments) > built-in defaults. Every run writes a
``manifest.json`` echoing the fully resolved configuration, the artifact
version, and a timestamp, before any result file is produced.

Exit codes: 0 success (or assertion pass), 1 assertion fail, 2 usage error,
3 data/format error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import FormatError, NumericError

EXIT_OK, EXIT_ASSERT, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3, 4


class UsageError(ValueError):
    pass


def parse_sigma_grid(text: str) -> list[float]:
    """Either 'start:stop:step' (inclusive ends) or a comma list."""
    try:
        if ":" in text:
            start, stop, step = (float(x) for x in text.split(":"))
            if step <= 0 or stop < start:
                raise ValueError
            n = int(round((stop - start) / step))
            grid = [start + i * step for i in range(n + 1)]
            return [g for g in grid if g <= stop + 1e-12]
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"malformed sigma grid {text!r}") from exc


def load_config_file(path) -> dict:
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def resolve_config(args: argparse.Namespace, defaults: dict) -> dict:
    """flags > config file > defaults; file values are parsed by default type."""
    file_vals = {}
    if getattr(args, "config", None):
        file_vals = load_config_file(args.config)
    cfg = {}
    for key, default in defaults.items():
        flag = getattr(args, key, None)
        if flag is not None:
            cfg[key] = flag
        elif key in file_vals:
            raw = file_vals[key]
            if isinstance(default, bool):
                cfg[key] = raw.lower() in ("1", "true", "yes", "on")
            elif isinstance(default, int):
                cfg[key] = int(raw)
            elif isinstance(default, float):
                cfg[key] = float(raw)
            else:
                cfg[key] = raw
        else:
            cfg[key] = default
    return cfg


def write_manifest(outdir: Path, command: str, cfg: dict) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config": cfg,
        "artifact_version": __version__,
        "created_unix": time.time(),
    }
    (outdir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_phase_diagram(args) -> int:
    from .meanfield import phase_diagram, write_phase_csv

    defaults = {"sigma": "0.5:2.0:0.05", "out": "out/phase", "jobs": 1}
    cfg = resolve_config(args, defaults)
    grid = parse_sigma_grid(cfg["sigma"])
    if not grid:
        raise UsageError("empty sigma grid")
    outdir = Path(cfg["out"])
    write_manifest(outdir, "phase-diagram", cfg)
    if cfg["jobs"] > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=cfg["jobs"]) as pool:
            rows = [r[0] for r in pool.map(phase_diagram, [[s] for s in grid])]
    else:
        rows = phase_diagram(grid)
    write_phase_csv(outdir / "phase.csv", rows)
    print(f"wrote {outdir / 'phase.csv'} ({len(rows)} rows)")
    return EXIT_OK


def cmd_ensemble_compare(args) -> int:
    from .ensemble import EnsembleConfig, measure_c_profile
    from .meanfield import MeanFieldParams, c_fixed_point

    defaults = {"sigma": "0.5,0.8,1.2,1.5,2.0", "networks": 200, "depth": 100,
                "capsules": 16, "seed": 0, "out": "out/ensemble",
                "tol": 0.05, "do_assert": False, "jobs": 1, "tail": 30}
    cfg = resolve_config(args, defaults)
    grid = parse_sigma_grid(cfg["sigma"])
    outdir = Path(cfg["out"])
    write_manifest(outdir, "ensemble-compare", cfg)
    rows, ok = [], True
    for i, sig in enumerate(grid):
        ecfg = EnsembleConfig(n_networks=cfg["networks"], depth=cfg["depth"],
                              n_capsules=cfg["capsules"], sigma_w=sig,
                              seed=cfg["seed"] + i, jobs=cfg["jobs"])
        mean, stderr = measure_c_profile(ecfg)
        emp = float(mean[-cfg["tail"]:].mean())
        err = float(stderr[-cfg["tail"]:].mean())
        theory = c_fixed_point(MeanFieldParams(sig))
        rows.append((sig, theory, emp, err))
        if abs(emp - theory) > cfg["tol"]:
            ok = False
    with open(outdir / "compare.csv", "w") as fh:
        fh.write("sigma_w,c_star_theory,c_empirical,c_stderr\n")
        for row in rows:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
    summary = {"rows": [dict(zip(("sigma_w", "theory", "empirical", "stderr"), r))
                        for r in rows],
               "tolerance": cfg["tol"], "within_tolerance": ok}
    (outdir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"wrote {outdir / 'compare.csv'}; agreement within {cfg['tol']}: {ok}")
    if cfg["do_assert"]:
        return EXIT_OK if ok else EXIT_ASSERT
    return EXIT_OK


def _dataset_paths(data_dir: str, dataset: str) -> dict:
    stem = Path(data_dir)
    names = {
        "train_images": "train-images-idx3-ubyte",
        "train_labels": "train-labels-idx1-ubyte",
        "test_images": "t10k-images-idx3-ubyte",
        "test_labels": "t10k-labels-idx1-ubyte",
    }
    out = {}
    for key, base in names.items():
        candidates = [stem / dataset / base, stem / dataset / (base + ".gz"),
                      stem / base, stem / (base + ".gz")]
        found = next((c for c in candidates if c.exists()), None)
        if found is None:
            raise FileNotFoundError(
                f"missing {base}[.gz] under {stem} (looked in '{dataset}/' too); "
                f"supply --data or fetch the IDX files with "
                f"goldnet.tasks.fetch_idx_files(base_url, ...)")
        out[key] = found
    return out


def cmd_train_mlp(args) -> int:
    from .cells import Classifier, NetworkSpec
    from .numcore import RngStream
    from .tasks import load_idx
    from .training import TrainConfig, train_classifier

    defaults = {"family": "u1", "layers": 100, "features": 64, "sigma": 1.5,
                "epochs": 5, "lr": 1e-3, "batch": 256, "seed": 0,
                "capsule_dim": 2, "data": "data", "dataset": "fashion",
                "out": "out/mlp", "limit_train": 0}
    cfg = resolve_config(args, defaults)
    paths = _dataset_paths(cfg["data"], cfg["dataset"])
    train = load_idx(paths["train_images"], paths["train_labels"])
    test = load_idx(paths["test_images"], paths["test_labels"])
    outdir = Path(cfg["out"])
    write_manifest(outdir, "train-mlp", cfg)
    tx = train.pixels().reshape(len(train), -1)
    ty = train.labels.astype(np.int64)
    if cfg["limit_train"]:
        tx, ty = tx[:cfg["limit_train"]], ty[:cfg["limit_train"]]
    sx = test.pixels().reshape(len(test), -1)
    sy = test.labels.astype(np.int64)
    spec = NetworkSpec(family=cfg["family"], n_capsules=cfg["features"],
                       depth=cfg["layers"], input_dim=tx.shape[1], output_dim=10,
                       capsule_dim=cfg["capsule_dim"], sigma_w=cfg["sigma"])
    model = Classifier(spec, RngStream(cfg["seed"]))
    tc = TrainConfig(batch_size=cfg["batch"], lr=cfg["lr"], seed=cfg["seed"],
                     metrics_path=str(outdir / "metrics.jsonl"))
    records = train_classifier(model, tx, ty, sx, sy, tc, epochs=cfg["epochs"])
    print(json.dumps(records[-1]))
    return EXIT_OK


def _copy_cell_spec(cfg, out_dim=10):
    from .cells import RecurrentCellSpec

    frozen = (0,) if cfg["encoder"] == "lowvar" and cfg["freeze_blank"] else ()
    return RecurrentCellSpec(kind=cfg["cell"], n_capsules=cfg["n"],
                             input_dim=10, output_dim=out_dim,
                             capsule_dim=cfg.get("capsule_dim", 2),
                             activation=cfg["activation"],
                             rec_init=cfg["rec_init"],
                             encoder_init=cfg["encoder"],
                             freeze_input_cols=frozen)


def cmd_train_copy(args) -> int:
    from .cells import RecurrentModel
    from .numcore import RngStream
    from .tasks import CopyTaskConfig, chance_baseline_loss, chance_recall_loss
    from .training import TrainConfig, train_recurrent_copy

    defaults = {"cell": "rnn_u1", "n": 16, "tmax": 10, "steps": 50_000,
                "lr": 1e-3, "batch": 128, "seed": 1, "eval_every": 1000,
                "eval_batch": 50, "rec_init": "identity", "encoder": "lowvar",
                "activation": "tanh", "freeze_blank": True,
                "stop_recall": 0.0, "out": "out/copy", "capsule_dim": 2}
    cfg = resolve_config(args, defaults)
    task = CopyTaskConfig(t_max=cfg["tmax"])
    outdir = Path(cfg["out"])
    write_manifest(outdir, "train-copy", cfg)
    model = RecurrentModel(_copy_cell_spec(cfg), RngStream(cfg["seed"]))
    tc = TrainConfig(steps=cfg["steps"], batch_size=cfg["batch"], lr=cfg["lr"],
                     eval_every=cfg["eval_every"], eval_batch=cfg["eval_batch"],
                     seed=cfg["seed"],
                     stop_recall_loss=cfg["stop_recall"] or None,
                     metrics_path=str(outdir / "metrics.jsonl"))
    records = train_recurrent_copy(model, task, tc)
    _save_checkpoint(outdir / "model.gna", model, cfg)
    final = dict(records[-1])
    final["chance_loss"] = chance_baseline_loss(task)
    final["chance_recall_loss"] = chance_recall_loss(task)
    print(json.dumps(final))
    return EXIT_OK


def cmd_train_seq_image(args) -> int:
    from .cells import RecurrentModel
    from .numcore import RngStream
    from .tasks import load_idx, sequentialize
    from .training import TrainConfig, train_sequential_images

    defaults = {"cell": "gru_u1", "n": 64, "epochs": 1, "lr": 1e-3,
                "batch": 128, "seed": 0, "perm_seed": 1234, "clip": 1.0,
                "rec_init": "identity", "encoder": "lowvar",
                "activation": "relu", "capsule_dim": 2, "data": "data",
                "dataset": "mnist", "out": "out/seq", "limit_train": 0,
                "lr_drop_epoch": 100}
    cfg = resolve_config(args, defaults)
    paths = _dataset_paths(cfg["data"], cfg["dataset"])
    train = load_idx(paths["train_images"], paths["train_labels"])
    test = load_idx(paths["test_images"], paths["test_labels"])
    outdir = Path(cfg["out"])
    write_manifest(outdir, "train-seq-image", cfg)
    seq = sequentialize(train, test, cfg["perm_seed"])
    tx, ty = seq.scaled("train")
    vx, vy = seq.scaled("val")
    if cfg["limit_train"]:
        tx, ty = tx[:cfg["limit_train"]], ty[:cfg["limit_train"]]
    from .cells import RecurrentCellSpec
    spec = RecurrentCellSpec(kind=cfg["cell"], n_capsules=cfg["n"], input_dim=1,
                             output_dim=10, capsule_dim=cfg["capsule_dim"],
                             activation=cfg["activation"],
                             rec_init=cfg["rec_init"], encoder_init=cfg["encoder"])
    model = RecurrentModel(spec, RngStream(cfg["seed"]))
    tc = TrainConfig(batch_size=cfg["batch"], lr=cfg["lr"], seed=cfg["seed"],
                     clip=cfg["clip"], lr_drop_step=cfg["lr_drop_epoch"],
                     metrics_path=str(outdir / "metrics.jsonl"))
    records = train_sequential_images(model, tx, ty, (vx, vy), tc,
                                      epochs=cfg["epochs"])
    _save_checkpoint(outdir / "model.gna", model, cfg)
    print(json.dumps(records[-1]))
    return EXIT_OK


def cmd_train_conv_copy(args) -> int:
    from .cells import RecurrentCellSpec, RecurrentModel
    from .numcore import RngStream
    from .tasks import CopyTaskConfig
    from .training import TrainConfig, train_recurrent_copy

    defaults = {"grid": "8x8", "channels": 4, "tmax": 20, "steps": 2000,
                "lr": 1e-3, "batch": 32, "seed": 0, "eval_every": 500,
                "eval_batch": 50, "rec_init": "uniform", "encoder": "lowvar",
                "kernel": 3, "out": "out/convcopy", "stop_recall": 0.0}
    cfg = resolve_config(args, defaults)
    try:
        gh, gw = (int(v) for v in cfg["grid"].lower().split("x"))
    except ValueError as exc:
        raise UsageError(f"malformed grid {cfg['grid']!r}") from exc
    outdir = Path(cfg["out"])
    write_manifest(outdir, "train-conv-copy", cfg)
    task = CopyTaskConfig(t_max=cfg["tmax"])
    spec = RecurrentCellSpec(kind="conv2d_u1", n_capsules=cfg["channels"] * gh * gw,
                             input_dim=10, output_dim=10,
                             rec_init=cfg["rec_init"], encoder_init=cfg["encoder"],
                             freeze_input_cols=(0,) if cfg["encoder"] == "lowvar" else (),
                             grid=(cfg["channels"], gh, gw), kernel_size=cfg["kernel"])
    model = RecurrentModel(spec, RngStream(cfg["seed"]))
    tc = TrainConfig(steps=cfg["steps"], batch_size=cfg["batch"], lr=cfg["lr"],
                     eval_every=cfg["eval_every"], eval_batch=cfg["eval_batch"],
                     seed=cfg["seed"], stop_recall_loss=cfg["stop_recall"] or None,
                     metrics_path=str(outdir / "metrics.jsonl"))
    records = train_recurrent_copy(model, task, tc)
    _save_checkpoint(outdir / "model.gna", model, cfg)
    print(json.dumps(records[-1]))
    return EXIT_OK


def _save_checkpoint(path, model, cfg) -> None:
    from dataclasses import asdict
    from .layers import save_arrays

    arrays = {name: t.data for name, t in model.params.items()}
    meta = {"spec": {k: (list(v) if isinstance(v, tuple) else v)
                     for k, v in asdict(model.spec).items()},
            "config": {k: v for k, v in cfg.items() if not isinstance(v, Path)}}
    save_arrays(path, arrays, meta)


def _load_conv_checkpoint(path):
    from .cells import RecurrentCellSpec, RecurrentModel
    from .layers import load_arrays
    from .numcore import RngStream
    from . import autodiff as ad

    arrays, meta = load_arrays(path)
    spec_dict = meta.get("spec", {})
    if spec_dict.get("kind") != "conv2d_u1":
        raise FormatError(f"checkpoint is not a conv2d_u1 model: {spec_dict.get('kind')}")
    spec_dict["grid"] = tuple(spec_dict.get("grid", ()))
    spec_dict["freeze_input_cols"] = tuple(spec_dict.get("freeze_input_cols", ()))
    spec = RecurrentCellSpec(**spec_dict)
    model = RecurrentModel(spec, RngStream(0))
    for name, tensor in model.params.items():
        if name not in arrays or arrays[name].shape != tensor.data.shape:
            raise FormatError(f"checkpoint/spec mismatch on parameter {name!r}")
        model.params[name] = ad.Tensor(arrays[name])
    return model


def _vortex_self_test() -> bool:
    from .topo import PhaseField, winding_numbers

    y, x = np.mgrid[0:8, 0:8]
    th = np.arctan2(y - 2.5, x - 3.5)
    vm = winding_numbers(PhaseField(th, np.ones((8, 8))), mask_low_magnitude=False)
    return (vm.n_plus, vm.n_minus) == (1, 0) and vm.winding[2, 3] == 1


def cmd_vortices(args) -> int:
    from . import autodiff as ad
    from .cells import RecurrentCellSpec, RecurrentModel
    from .numcore import RngStream
    from .tasks import CopyTaskConfig, gen_copy_batch
    from .topo import vortex_timeseries, write_grid_dump, write_vortex_csv

    defaults = {"checkpoint": "", "random_init": False, "steps": 50,
                "channel": 0, "grid": "8x8", "channels": 4, "tmax": 20,
                "seed": 0, "out": "out/vortices", "self_test": False,
                "dump_grids": False}
    cfg = resolve_config(args, defaults)
    if cfg["self_test"]:
        ok = _vortex_self_test()
        print("vortex self-test:", "PASS" if ok else "FAIL")
        return EXIT_OK if ok else EXIT_NUMERIC
    if not cfg["checkpoint"] and not cfg["random_init"]:
        raise UsageError("need --checkpoint PATH or --random-init")
    if cfg["checkpoint"]:
        model = _load_conv_checkpoint(cfg["checkpoint"])
    else:
        gh, gw = (int(v) for v in cfg["grid"].lower().split("x"))
        spec = RecurrentCellSpec(kind="conv2d_u1",
                                 n_capsules=cfg["channels"] * gh * gw,
                                 input_dim=10, output_dim=10,
                                 rec_init="uniform", encoder_init="standard",
                                 grid=(cfg["channels"], gh, gw))
        model = RecurrentModel(spec, RngStream(cfg["seed"]))
    outdir = Path(cfg["out"])
    write_manifest(outdir, "vortices", cfg)
    task = CopyTaskConfig(t_max=cfg["tmax"])
    batch = gen_copy_batch(task, RngStream(cfg["seed"] + 1), 1)
    steps = min(cfg["steps"], batch.inputs.shape[1])
    h = model.init_state(1)
    traj = []
    ctx = model.precompute(batch.inputs[:, :steps])
    for t in range(steps):
        h = model.step_pre(h, ctx, t)
        traj.append(h.data[0])
    series = vortex_timeseries(traj, channel=cfg["channel"])
    write_vortex_csv(outdir / "vortices.csv", series)
    if cfg["dump_grids"]:
        write_grid_dump(outdir / "hidden.gng", np.stack(traj),
                        {"channel": cfg["channel"]})
    print(f"wrote {outdir / 'vortices.csv'} "
          f"(n+ final {series.n_plus[-1]}, n- final {series.n_minus[-1]})")
    return EXIT_OK


# --------------------------------------------------------------------------

def _add_common(sub):
    sub.add_argument("--config", help="flat key = value config file")
    sub.add_argument("--out", help="output directory")
    sub.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="goldnet",
                                 description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sp = ap.add_subparsers(dest="command", required=True)

    p = sp.add_parser("phase-diagram", help="mean-field (sigma, c*, xi) table")
    _add_common(p)
    p.add_argument("--sigma")
    p.add_argument("--jobs", type=int)
    p.set_defaults(fn=cmd_phase_diagram)

    p = sp.add_parser("ensemble-compare", help="theory vs empirical order parameter")
    _add_common(p)
    p.add_argument("--sigma")
    p.add_argument("--networks", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--capsules", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--tail", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--assert", dest="do_assert", action="store_const", const=True)
    p.set_defaults(fn=cmd_ensemble_compare)

    p = sp.add_parser("train-mlp", help="deep classifier on IDX image data")
    _add_common(p)
    p.add_argument("--family")
    p.add_argument("--layers", type=int)
    p.add_argument("--features", type=int)
    p.add_argument("--capsule-dim", dest="capsule_dim", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--data")
    p.add_argument("--dataset")
    p.add_argument("--limit-train", dest="limit_train", type=int)
    p.set_defaults(fn=cmd_train_mlp)

    p = sp.add_parser("train-copy", help="variable-delay copy task")
    _add_common(p)
    p.add_argument("--cell")
    p.add_argument("--n", type=int)
    p.add_argument("--capsule-dim", dest="capsule_dim", type=int)
    p.add_argument("--tmax", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--eval-every", dest="eval_every", type=int)
    p.add_argument("--eval-batch", dest="eval_batch", type=int)
    p.add_argument("--rec-init", dest="rec_init")
    p.add_argument("--encoder")
    p.add_argument("--activation")
    p.add_argument("--stop-recall", dest="stop_recall", type=float)
    p.add_argument("--no-freeze-blank", dest="freeze_blank",
                   action="store_const", const=False)
    p.set_defaults(fn=cmd_train_copy)

    p = sp.add_parser("train-seq-image", help="pixel-by-pixel image classification")
    _add_common(p)
    p.add_argument("--cell")
    p.add_argument("--n", type=int)
    p.add_argument("--capsule-dim", dest="capsule_dim", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--clip", type=float)
    p.add_argument("--perm-seed", dest="perm_seed", type=int)
    p.add_argument("--rec-init", dest="rec_init")
    p.add_argument("--encoder")
    p.add_argument("--activation")
    p.add_argument("--data")
    p.add_argument("--dataset")
    p.add_argument("--limit-train", dest="limit_train", type=int)
    p.add_argument("--lr-drop-epoch", dest="lr_drop_epoch", type=int)
    p.set_defaults(fn=cmd_train_seq_image)

    p = sp.add_parser("train-conv-copy", help="2-D convolutional phase-equivariant copy run")
    _add_common(p)
    p.add_argument("--grid")
    p.add_argument("--channels", type=int)
    p.add_argument("--kernel", type=int)
    p.add_argument("--tmax", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--eval-every", dest="eval_every", type=int)
    p.add_argument("--eval-batch", dest="eval_batch", type=int)
    p.add_argument("--rec-init", dest="rec_init")
    p.add_argument("--encoder")
    p.add_argument("--stop-recall", dest="stop_recall", type=float)
    p.set_defaults(fn=cmd_train_conv_copy)

    p = sp.add_parser("vortices", help="winding-number analysis of a conv rollout")
    _add_common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--random-init", dest="random_init",
                   action="store_const", const=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--channel", type=int)
    p.add_argument("--grid")
    p.add_argument("--channels", type=int)
    p.add_argument("--tmax", type=int)
    p.add_argument("--self-test", dest="self_test",
                   action="store_const", const=True)
    p.add_argument("--dump-grids", dest="dump_grids",
                   action="store_const", const=True)
    p.set_defaults(fn=cmd_vortices)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, FormatError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
