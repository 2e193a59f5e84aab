"""Batch front-end: ``c2g <command> [--config FILE] [--seed N] [--out DIR] [--mode M]``.

Each command reads a JSON config (unknown keys are rejected), applies flag
overrides, and writes its artifacts into a scratch directory that is moved
to ``--out`` only when the command succeeds.  ``C2G_THREADS`` caps the
number of worker processes used for per-sample work.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import shutil
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import config as hp
from . import contactcvae, data, graspnet, metrics, refine
from .geometry import GeometryError, write_obj, write_ply
from .hand import HandPose, default_model, forward
from .layers import CheckpointError

_TRAIN_KEYS = {"dataset": None, "epochs": 130, "batch_size": 32, "lr": 1e-4,
               "augment_translation": 0.01, "augment_rotation_deg": 1.0, "resume": None, "seed": 0}

DEFAULTS = {
    "synth-data": {"n_objects": 10, "grasps_per_object": 4, "n_points": data.N_POINTS,
                   "test_kinds": ["capsule"], "seed": 0},
    "train-contact": dict(_TRAIN_KEYS),
    "train-grasp": dict(_TRAIN_KEYS, contact_checkpoint=None, gt_fraction=0.5),
    "generate": {"dataset": None, "contact_checkpoint": None, "grasp_checkpoint": None,
                 "n_seeds": 4, "samples": None, "seed": 0},
    "refine": {"dataset": None, "predictions": None, "mode": "partial",
               "steps": refine.REFINE_STEPS, "seed": 0},
    "eval": {"dataset": None, "poses": "gt", "samples": None, "representation": "vertices", "seed": 0},
    "export": {"dataset": None, "poses": None, "samples": None, "seed": 0},
    "hyperparameters": {"seed": 0},
}


RUN_RECORD = "run_config.json"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    command: str
    params: dict

    @classmethod
    def build(cls, command: str, file_params: dict | None = None, **overrides) -> "RunConfig":
        """Defaults, then the config file, then non-None flag overrides; unknown keys raise."""
        if command not in DEFAULTS:
            raise ConfigError(f"unknown command {command!r}")
        params = dict(DEFAULTS[command])
        for source in (file_params or {}, {k: v for k, v in overrides.items() if v is not None}):
            unknown = set(source) - set(params)
            if unknown:
                raise ConfigError(f"{command}: unknown config keys {sorted(unknown)}")
            params.update(source)
        cfg = cls(command, params)
        cfg.validate()
        return cfg

    def validate(self):
        p = self.params
        if not isinstance(p["seed"], int) or isinstance(p["seed"], bool) or not 0 <= p["seed"] < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if "mode" in p and p["mode"] not in refine.MODES:
            raise ConfigError(f"mode must be one of {refine.MODES}")
        for key in ("epochs", "batch_size", "n_objects", "grasps_per_object", "n_points", "n_seeds"):
            if key in p and (not isinstance(p[key], int) or p[key] < (0 if key == "epochs" else 1)):
                raise ConfigError(f"{key} must be a positive integer")
        if "steps" in p and (not isinstance(p["steps"], int) or p["steps"] < 0):
            raise ConfigError("steps must be a non-negative integer")
        if "lr" in p and not p["lr"] > 0:
            raise ConfigError("lr must be positive")


def workers() -> int:
    raw = os.environ.get("C2G_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"C2G_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True)


def _require(p, key):
    if p.get(key) is None:
        raise ConfigError(f"config key {key!r} is required")
    path = Path(p[key])
    if not path.exists():
        raise FileNotFoundError(f"{key}: {path} does not exist")
    return path


def _load_dataset(p):
    return data.load_dataset(_require(p, "dataset"))


def _select(samples, split, wanted, default="test"):
    by_id = {s.sample_id: s for s in samples}
    ids = split[default] if wanted is None else list(wanted)
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise ConfigError(f"unknown sample ids {missing[:5]}")
    return [by_id[i] for i in ids]


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])


def _predictions(path):
    files = sorted(f for f in Path(path).glob("*.json") if f.name != RUN_RECORD)
    return [(f.stem, json.loads(f.read_text())) for f in files]


def _pose_from_record(rec) -> HandPose:
    return HandPose.from_vector(rec["final_pose"] if "final_pose" in rec else rec["pose"])


# ---------------------------------------------------------------- commands


def cmd_synth_data(p, out: Path):
    samples, split = data.build_dataset(p["n_objects"], p["grasps_per_object"], seed=p["seed"],
                                        n_points=p["n_points"], test_kinds=tuple(p["test_kinds"]),
                                        workers=workers())
    data.save_dataset(out, samples, split)
    return {"samples": len(samples), "train": len(split["train"]), "test": len(split["test"])}


def _train(p, out: Path, net_cls, module, ckpt_name, csv_name, columns, extra_cfg, epoch_kwargs):
    samples, split = _load_dataset(p)
    train = _select(samples, split, None, "train")
    if not train:
        raise ConfigError("dataset has no training samples")
    if p["resume"] is not None:
        net = net_cls.load(_require(p, "resume"))
        net.config.update({k: p[k] for k in ("batch_size", "lr", "augment_translation",
                                             "augment_rotation_deg")})
        net.config.update(extra_cfg)
        opt = net.restore_optimizer(module.make_optimizer(net))
    else:
        cfg = {k: p[k] for k in ("batch_size", "lr", "augment_translation", "augment_rotation_deg")}
        cfg.update(epochs=p["epochs"], **extra_cfg)
        net = net_cls(cfg, seed=p["seed"])
        opt = module.make_optimizer(net)
    rows = []
    for _ in range(p["epochs"]):
        st = module.train_epoch(net, train, opt, seed=p["seed"], **epoch_kwargs)
        rows.append([st["epoch"]] + [st[c] for c in columns])
    net.save(out / ckpt_name, extra={"run_config": p}, optimizer=opt)
    _write_csv(out / csv_name, ["epoch"] + columns, rows)
    return {"epoch": net.epoch, "final_loss": rows[-1][1] if rows else None}


def cmd_train_contact(p, out: Path):
    return _train(p, out, contactcvae.ContactCVAE, contactcvae, "contactcvae.ckpt", "contact_losses.csv",
                  ["loss", "bce", "dice", "kl"], {}, {})


def cmd_train_grasp(p, out: Path):
    cvae = None
    if p["contact_checkpoint"] is not None:
        cvae = contactcvae.ContactCVAE.load(_require(p, "contact_checkpoint"))
    cols = ["loss"] + list(graspnet.DEFAULT_CONFIG["weights"])
    return _train(p, out, graspnet.GraspNet, graspnet, "graspnet.ckpt", "grasp_losses.csv", cols,
                  {"gt_fraction": p["gt_fraction"]}, {"cvae": cvae})


def latent_seed(seed: int, k: int) -> int:
    return int(np.random.SeedSequence([seed, k]).generate_state(1)[0])


def cmd_generate(p, out: Path):
    samples, split = _load_dataset(p)
    cvae = contactcvae.ContactCVAE.load(_require(p, "contact_checkpoint"))
    net = graspnet.GraspNet.load(_require(p, "grasp_checkpoint"))
    chosen = _select(samples, split, p["samples"])
    n = 0
    for s in chosen:
        for k in range(p["n_seeds"]):
            ls = latent_seed(p["seed"], k)
            c = cvae.generate(s.cloud.points, ls)
            pred = net.predict(s.cloud, c)
            rec = {"sample_id": s.sample_id, "k": k, "latent_seed": ls,
                   "contact": [float(x) for x in c], "pose": [float(x) for x in pred.pose.vector]}
            (out / f"{s.sample_id}_k{k:03d}.json").write_text(_dumps(rec))
            n += 1
    return {"predictions": n}


def _refine_one(args):
    rec, s, mode, steps = args
    pose = HandPose.from_vector(rec["pose"])
    report = refine.refine(pose, s.cloud, s.object_mesh, mode, contact=np.asarray(rec["contact"]), steps=steps)
    return dict(report.to_json(), sample_id=rec["sample_id"], k=rec.get("k", 0))


def _map(fn, items):
    n = workers()
    if n > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=n) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def cmd_refine(p, out: Path):
    samples, _ = _load_dataset(p)
    by_id = {s.sample_id: s for s in samples}
    preds = _predictions(_require(p, "predictions"))
    jobs = []
    for name, rec in preds:
        if rec.get("sample_id") not in by_id:
            raise ConfigError(f"{name}: sample {rec.get('sample_id')!r} not in dataset")
        jobs.append((rec, by_id[rec["sample_id"]], p["mode"], p["steps"]))
    reports = _map(_refine_one, jobs)
    for (name, _), rep in zip(preds, reports):
        (out / f"{name}.json").write_text(_dumps(rep))
    return {"reports": len(reports), "mode": p["mode"]}


def _eval_one(args):
    pose, s = args
    hand = forward(default_model(), pose)
    return metrics.evaluate_grasp(hand, s.object_mesh)


def _grasps_for_eval(p, samples, split):
    by_id = {s.sample_id: s for s in samples}
    if p["poses"] == "gt":
        chosen = _select(samples, split, p["samples"], "test")
        return [(s.sample_id, s.gt_pose, s, s.object_id) for s in chosen]
    items = []
    wanted = None if p["samples"] is None else set(p["samples"])
    for name, rec in _predictions(_require(p, "poses")):
        sid = rec.get("sample_id")
        if sid not in by_id:
            raise ConfigError(f"{name}: sample {sid!r} not in dataset")
        if wanted is None or sid in wanted:
            items.append((name, _pose_from_record(rec), by_id[sid], sid))
    return items


def cmd_eval(p, out: Path):
    samples, split = _load_dataset(p)
    items = _grasps_for_eval(p, samples, split)
    if not items:
        raise ConfigError("nothing to evaluate")
    evals = _map(_eval_one, [(pose, s) for _, pose, s, _ in items])
    rows = [[name, e.depth_max, e.depth_mean, e.volume, e.sim_disp, int(e.in_contact), int(e.success)]
            for (name, *_), e in zip(items, evals)]
    _write_csv(out / "metrics.csv", ["sample_id", "dep_max", "dep_mean", "vol", "sim_disp", "contact",
                                     "success"], rows)
    summary = metrics.summarize(evals)
    # diversity among grasps that share an object (or a source sample)
    groups = {}
    model = default_model()
    for _, pose, _, group in items:
        groups.setdefault(group, []).append(pose)
    divs = []
    for poses in groups.values():
        if len(poses) >= 2:
            reps = ([forward(model, q) for q in poses] if p["representation"] == "vertices" else poses)
            divs.append(metrics.diversity(reps, p["representation"]))
    summary["Div"] = float(np.mean(divs)) if divs else None
    summary["n"] = len(evals)
    (out / "summary.json").write_text(_dumps(summary))
    return summary


def heat_colors(scores) -> np.ndarray:
    """Linear blue-to-red ramp: 0 -> (0, 0, 255), 1 -> (255, 0, 0)."""
    c = np.clip(np.asarray(scores, dtype=np.float64), 0.0, 1.0)
    return np.stack([np.round(255 * c), np.zeros_like(c), np.round(255 * (1 - c))], axis=1).astype(np.uint8)


def cmd_export(p, out: Path):
    samples, _ = _load_dataset(p)
    by_id = {s.sample_id: s for s in samples}
    wanted = None if p["samples"] is None else set(p["samples"])
    model = default_model()
    n = 0
    for name, rec in _predictions(_require(p, "poses")):
        sid = rec.get("sample_id")
        if wanted is not None and sid not in wanted and name not in wanted:
            continue
        if sid not in by_id:
            raise ConfigError(f"{name}: sample {sid!r} not in dataset")
        s = by_id[sid]
        hand = forward(model, _pose_from_record(rec))
        write_obj(out / f"{name}_hand.obj", hand.trimesh)
        write_obj(out / f"{name}_object.obj", s.object_mesh)
        scores = np.asarray(rec.get("contact", s.gt_contact), dtype=np.float64)
        write_ply(out / f"{name}_contact.ply", s.cloud.points, colors=heat_colors(scores),
                  scalars={"contact": scores})
        n += 1
    return {"exported": n}


def cmd_hyperparameters(p, out: Path):
    values = hp.hyperparameters()
    (out / "hyperparameters.json").write_text(_dumps(values))
    return values


COMMANDS = {
    "synth-data": cmd_synth_data,
    "train-contact": cmd_train_contact,
    "train-grasp": cmd_train_grasp,
    "generate": cmd_generate,
    "refine": cmd_refine,
    "eval": cmd_eval,
    "export": cmd_export,
    "hyperparameters": cmd_hyperparameters,
}


# ---------------------------------------------------------------- driver


def _commit(tmp: Path, out: Path):
    """Move the finished scratch directory to ``out``, replacing an older result."""
    old = None
    if out.exists():
        old = out.with_name(f".{out.name}.old-{os.getpid()}")
        out.rename(old)
    tmp.rename(out)
    if old is not None:
        shutil.rmtree(old) if old.is_dir() else old.unlink()


def run(command: str, params: dict, out) -> dict:
    """Execute a validated command, writing atomically into ``out``."""
    out = Path(out)
    if not out.parent.is_dir():
        raise FileNotFoundError(f"output parent {out.parent} does not exist")
    if out.exists() and not out.is_dir():
        raise ConfigError(f"{out} exists and is not a directory")
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.tmp-", dir=out.parent))
    try:
        result = COMMANDS[command](params, tmp)
        if command == "export" and result["exported"] == 0:
            # an empty selection leaves the filesystem untouched
            shutil.rmtree(tmp)
            return result
        (tmp / RUN_RECORD).write_text(_dumps({"command": command, "params": params}))
        _commit(tmp, out)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return result


def parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="c2g", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path, help="JSON file of command parameters")
        sp.add_argument("--seed", type=int, help="overrides the config seed")
        sp.add_argument("--out", type=Path, required=name != "hyperparameters", help="output directory")
        sp.add_argument("--mode", choices=refine.MODES, help="refinement mode (refine only)")
    return ap


def main(argv=None) -> int:
    args = parser().parse_args(argv)
    try:
        file_params = {}
        if args.config is not None:
            file_params = json.loads(Path(args.config).read_text())
            if not isinstance(file_params, dict):
                raise ConfigError("config file must hold a JSON object")
        if args.mode is not None and args.command != "refine":
            raise ConfigError("--mode only applies to refine")
        cfg = RunConfig.build(args.command, file_params, seed=args.seed, mode=args.mode)
        if args.out is None:
            print(_dumps(hp.hyperparameters()))
            return 0
        result = run(cfg.command, cfg.params, args.out)
    except (ConfigError, CheckpointError, GeometryError, FileNotFoundError, ValueError, RuntimeError,
            contactcvae.UntrainedModelError, json.JSONDecodeError) as exc:
        print(f"c2g {args.command}: error: {exc}", file=sys.stderr)
        return 2
    print(_dumps(result) if args.command == "hyperparameters" else json.dumps(result, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
