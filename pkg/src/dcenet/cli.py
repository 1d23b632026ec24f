"""Command-line entry points: ``train``, ``predict``, ``evaluate`` and ``synth``.

Configuration is a ``key = value`` file (``#`` comments allowed) plus
``--set key=value`` overrides.  Failures exit with status 1 (2 for usage
errors) and print ``dcenet: error[<category>]: <message>`` on stderr.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import glob
import math
import sys
from collections import defaultdict
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import cvae, data
from .baselines import constant_velocity, linear_extrapolation
from .dynmap import MapConfig
from .encoder import EncoderConfig
from .ranking import PredictionSet, ade, fde, score_and_select, top_n


class CliError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


@dataclass
class RunConfig:
    d_embed: int = 64
    d_k: int = 64
    heads: int = 2
    attention_layers: int = 2
    lstm_hidden: int = 64
    fusion_dim: int = 64
    use_dynamic_maps: bool = True
    position_encoding: str = "each"
    residual: bool = False
    mark_position_cell: bool = False
    z_dim: int = 32
    recog_hidden: int = 64
    decoder_hidden: int = 64
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    lr_decay: float = 1.0
    kl_warmup: int = 0
    epochs: int = 10
    batch_size: int = 16
    n_samples: int = 10
    seed: int = 0
    stride: int = 1
    train_data: str = ""
    checkpoint: str = "model.ckpt"
    loss_log: str = "loss.csv"

    def validate(self) -> None:
        try:
            self.model_config()
        except ValueError as exc:
            raise CliError("config", str(exc)) from None
        if self.optimizer not in ("adam", "sgd"):
            raise CliError("config", f"optimizer must be adam or sgd, got {self.optimizer!r}")
        if self.position_encoding not in ("each", "once", "none"):
            raise CliError("config", f"position_encoding must be each, once or none, got {self.position_encoding!r}")
        for name in ("epochs", "batch_size", "n_samples", "stride", "z_dim"):
            if getattr(self, name) < 1:
                raise CliError("config", f"{name} must be >= 1")

    def model_config(self) -> cvae.ModelConfig:
        enc = EncoderConfig(
            d_embed=self.d_embed,
            d_k=self.d_k,
            heads=self.heads,
            attention_layers=self.attention_layers,
            lstm_hidden=self.lstm_hidden,
            fusion_dim=self.fusion_dim,
            use_dynamic_maps=self.use_dynamic_maps,
            position_encoding=self.position_encoding,
            residual=self.residual,
            map_config=MapConfig(mark_position_cell=self.mark_position_cell),
        )
        return cvae.ModelConfig(
            encoder=enc,
            z_dim=self.z_dim,
            recog_hidden=self.recog_hidden,
            decoder_hidden=self.decoder_hidden,
            seed=self.seed,
        )

    def dumps(self) -> str:
        return "".join(f"{f.name} = {_format(getattr(self, f.name))}\n" for f in fields(self))


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(name: str, kind, raw: str):
    raw = raw.strip()
    try:
        if kind in (bool, "bool"):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind in (int, "int"):
            return int(raw)
        if kind in (float, "float"):
            return float(raw)
    except ValueError:
        raise CliError("config", f"invalid value for {name}: {raw!r}") from None
    return raw


def apply_settings(cfg: RunConfig, pairs) -> RunConfig:
    known = {f.name: f.type for f in fields(RunConfig)}
    updates = {}
    for key, raw in pairs:
        if key not in known:
            raise CliError("config", f"unknown config key {key!r}")
        updates[key] = _coerce(key, known[key], raw)
    return dataclasses.replace(cfg, **updates)


def parse_config_text(text: str, source: str = "<config>") -> list[tuple[str, str]]:
    pairs = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError("config", f"{source}:{lineno}: expected key = value")
        key, value = line.split("=", 1)
        pairs.append((key.strip(), value.strip()))
    return pairs


def load_config(path=None, overrides=()) -> RunConfig:
    cfg = RunConfig()
    if path:
        p = Path(path)
        if not p.exists():
            raise CliError("io", f"config file not found: {path}")
        cfg = apply_settings(cfg, parse_config_text(p.read_text(), str(p)))
    pairs = []
    for item in overrides:
        if "=" not in item:
            raise CliError("config", f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        pairs.append((k.strip(), v))
    cfg = apply_settings(cfg, pairs)
    cfg.validate()
    return cfg


# ----------------------------------------------------------------------- data


def expand_paths(source) -> list[Path]:
    items = source if isinstance(source, (list, tuple)) else [s for s in str(source).split(",") if s.strip()]
    out = []
    for item in items:
        item = str(item).strip()
        matches = sorted(glob.glob(item))
        if Path(item).is_dir():
            matches = sorted(str(p) for p in Path(item).glob("*.txt"))
        if not matches:
            raise CliError("data", f"no data files match {item!r}")
        out.extend(Path(m) for m in matches)
    if not out:
        raise CliError("data", "no data path given")
    return out


def load_windows(paths, stride: int = 1) -> list[data.Window]:
    windows = []
    for path in paths:
        try:
            trajs = data.parse_file(path)
        except data.ParseError as exc:
            raise CliError("data", str(exc)) from None
        windows.extend(data.extract_windows(trajs, stride=stride, scene=Path(path).stem))
    return windows


# ------------------------------------------------------------------- commands


def cmd_train(cfg: RunConfig, log=print) -> tuple[Path, Path]:
    """Train on ``cfg.train_data``; writes the checkpoint, its config and the loss log."""
    windows = load_windows(expand_paths(cfg.train_data), cfg.stride)
    if not windows:
        raise CliError("data", "training data yields no windows")
    model = cvae.DcenetModel(cfg.model_config())
    batch = cvae.make_batch(windows, model.cfg.encoder)
    per_epoch = math.ceil(len(windows) / cfg.batch_size)
    tcfg = cvae.TrainConfig(
        iterations=cfg.epochs * per_epoch,
        batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate,
        optimizer=cfg.optimizer,
        kl_warmup=cfg.kl_warmup,
        lr_decay=cfg.lr_decay,
        seed=cfg.seed,
    )
    history = cvae.fit(model, windows, tcfg, batch=batch)
    ckpt, loss_path = Path(cfg.checkpoint), Path(cfg.loss_log)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    cvae.save_checkpoint(model, ckpt)
    config_path(ckpt).write_text(cfg.dumps())
    loss_path.parent.mkdir(parents=True, exist_ok=True)
    with loss_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "recon", "kl", "total"])
        for e in range(cfg.epochs):
            chunk = np.array(history[e * per_epoch : (e + 1) * per_epoch])
            recon, kl = float(chunk[:, 0].mean()), float(chunk[:, 1].mean())
            w.writerow([e + 1, repr(recon), repr(kl), repr(recon + kl)])
            log(f"epoch {e + 1}: recon={recon:.4f} kl={kl:.4f}")
    return ckpt, loss_path


def config_path(checkpoint) -> Path:
    return Path(str(checkpoint) + ".cfg")


def scores_path(predictions) -> Path:
    p = Path(predictions)
    return p.with_name(p.stem + ".scores.csv")


def window_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def cmd_predict(
    data_paths,
    out,
    checkpoint=None,
    n: int = 10,
    seed: int = 0,
    model: str = "dcenet",
    config: RunConfig | None = None,
) -> tuple[Path, Path]:
    """Write sampled trajectories and the companion score file."""
    if n < 1:
        raise CliError("config", "n must be >= 1")
    cfg = config
    if model == "dcenet":
        if checkpoint is None:
            raise CliError("config", "predict --model dcenet needs --checkpoint")
        if cfg is None:
            side = config_path(checkpoint)
            cfg = load_config(side) if side.exists() else RunConfig()
    cfg = cfg or RunConfig()
    windows = load_windows(expand_paths(data_paths), cfg.stride)
    seeds = [window_seed(seed, i) for i in range(len(windows))]
    if model == "dcenet":
        net = cvae.DcenetModel(cfg.model_config())
        try:
            cvae.load_checkpoint(net, checkpoint)
        except FileNotFoundError:
            raise CliError("io", f"checkpoint not found: {checkpoint}") from None
        except cvae.CheckpointError as exc:
            raise CliError("checkpoint", str(exc)) from None
        sets = cvae.predict_many(net, windows, n, seeds=seeds) if windows else []
    elif model in ("cv", "linear"):
        fn = constant_velocity if model == "cv" else linear_extrapolation
        sets = []
        for w in windows:
            traj = fn(w.observed)
            trajs = np.repeat(traj[None], n, axis=0)
            sets.append(PredictionSet(trajs, np.zeros(n), 0) if n == 1 else score_and_select(trajs))
    else:
        raise CliError("config", f"unknown model {model!r}; expected dcenet, cv or linear")

    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["window_id", "sample_id", "step", "x", "y"])
        for w, ps in zip(windows, sets):
            for s, traj in enumerate(ps.trajectories):
                for t, (x, y) in enumerate(traj):
                    wr.writerow([w.window_id, s, t, repr(float(x)), repr(float(y))])
    sp = scores_path(out)
    with sp.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["window_id", "sample_id", "score", "most_likely"])
        for w, ps in zip(windows, sets):
            for s, score in enumerate(ps.scores):
                wr.writerow([w.window_id, s, repr(float(score)), int(s == ps.most_likely_index)])
    return out, sp


def read_predictions(path) -> dict[str, PredictionSet]:
    path = Path(path)
    if not path.exists():
        raise CliError("io", f"predictions file not found: {path}")
    rows = defaultdict(lambda: defaultdict(dict))
    with path.open() as fh:
        for r in csv.DictReader(fh):
            rows[r["window_id"]][int(r["sample_id"])][int(r["step"])] = (float(r["x"]), float(r["y"]))
    scores = defaultdict(dict)
    flags = {}
    sp = scores_path(path)
    if sp.exists():
        with sp.open() as fh:
            for r in csv.DictReader(fh):
                scores[r["window_id"]][int(r["sample_id"])] = float(r["score"])
                if int(r["most_likely"]):
                    flags[r["window_id"]] = int(r["sample_id"])
    out = {}
    for wid, samples in rows.items():
        ids = sorted(samples)
        trajs = np.array([[samples[s][t] for t in sorted(samples[s])] for s in ids])
        sc = np.array([scores[wid].get(s, 0.0) for s in ids])
        out[wid] = PredictionSet(trajs, sc, flags.get(wid, int(np.argmax(sc))))
    return out


@dataclass
class Metrics:
    count: int
    ade: float
    fde: float
    top_ade: float
    top_fde: float


def _aggregate(rows) -> Metrics:
    arr = np.array(rows).reshape(-1, 4)
    m = arr.mean(axis=0) if len(arr) else np.full(4, np.nan)
    return Metrics(len(arr), *map(float, m))


def cmd_evaluate(predictions, ground_truth, out=None, stride: int = 1):
    """Most-likely and best-of-N ADE/FDE, overall and per scene; the last row is ``ALL``."""
    preds = read_predictions(predictions)
    n_label = f"top{max((len(p) for p in preds.values()), default=0)}"
    windows = {w.window_id: w for w in load_windows(expand_paths(ground_truth), stride)}
    missing_truth = sorted(set(preds) - set(windows))
    missing_pred = sorted(set(windows) - set(preds))
    if missing_truth or missing_pred:
        parts = []
        if missing_pred:
            parts.append(f"no predictions for {missing_pred}")
        if missing_truth:
            parts.append(f"no ground truth for {missing_truth}")
        raise CliError("mismatch", "; ".join(parts))
    per_scene = defaultdict(list)
    for wid in sorted(preds):
        ps, truth = preds[wid], windows[wid].future
        ml = ps.most_likely
        ta, tf = top_n(ps, truth)
        per_scene[windows[wid].scene].append((ade(ml, truth), fde(ml, truth), ta, tf))
    report = {scene: _aggregate(rows) for scene, rows in sorted(per_scene.items())}
    report["ALL"] = _aggregate([r for rows in per_scene.values() for r in rows])
    if out is not None:
        with Path(out).open("w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["scene", "windows", "ade", "fde", f"ade@{n_label}", f"fde@{n_label}"])
            for scene, m in report.items():
                wr.writerow([scene, m.count, repr(m.ade), repr(m.fde), repr(m.top_ade), repr(m.top_fde)])
    return report


def format_report(report, n_label: str = "top10") -> str:
    header = ("scene", "windows", "ADE", "FDE", f"ADE@{n_label}", f"FDE@{n_label}")
    rows = [header] + [
        (s, str(m.count), f"{m.ade:.4f}", f"{m.fde:.4f}", f"{m.top_ade:.4f}", f"{m.top_fde:.4f}")
        for s, m in report.items()
    ]
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))) for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def cmd_synth(kind: str, agents: int, seed: int, out, scenes: int = 1, length: int = 20) -> list[Path]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for k in range(scenes):
        try:
            trajs = data.synth_scene(kind, agents, seed + k, length=length)
        except ValueError as exc:
            raise CliError("config", str(exc)) from None
        p = out / f"{kind}_{seed + k:04d}.txt"
        data.write_file(p, trajs)
        paths.append(p)
    return paths


# ----------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dcenet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--config")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")

    p = sub.add_parser("predict", help="sample trajectories for every window")
    p.add_argument("--data", required=True, help="file, directory, glob or comma-separated list")
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--model", default="dcenet", choices=("dcenet", "cv", "linear"))
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")

    p = sub.add_parser("evaluate", help="ADE/FDE report for a predictions file")
    p.add_argument("--predictions", required=True)
    p.add_argument("--ground-truth", required=True)
    p.add_argument("--out")
    p.add_argument("--stride", type=int, default=1)

    p = sub.add_parser("synth", help="write synthetic scenes in the trajectory file format")
    p.add_argument("--kind", required=True)
    p.add_argument("--agents", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scenes", type=int, default=1)
    p.add_argument("--length", type=int, default=20)
    p.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            ckpt, log = cmd_train(load_config(args.config, args.set))
            print(f"wrote {ckpt} and {log}")
        elif args.command == "predict":
            cfg = None
            if args.config or args.set:
                cfg = load_config(args.config, args.set)
            elif args.checkpoint and config_path(args.checkpoint).exists():
                cfg = load_config(config_path(args.checkpoint))
            n = args.n if args.n is not None else (cfg.n_samples if cfg else 10)
            seed = args.seed if args.seed is not None else (cfg.seed if cfg else 0)
            out, sp = cmd_predict(args.data, args.out, args.checkpoint, n, seed, args.model, cfg)
            print(f"wrote {out} and {sp}")
        elif args.command == "evaluate":
            report = cmd_evaluate(args.predictions, args.ground_truth, args.out, args.stride)
            n = max((len(p) for p in read_predictions(args.predictions).values()), default=0)
            print(format_report(report, f"top{n}"))
        elif args.command == "synth":
            for p in cmd_synth(args.kind, args.agents, args.seed, args.out, args.scenes, args.length):
                print(p)
    except CliError as exc:
        print(f"dcenet: error[{exc.category}]: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
