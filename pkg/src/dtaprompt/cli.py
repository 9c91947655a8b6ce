"""Command-line interface: convert, train, eval, predict, gradcheck, embed.

Exit codes
    0   success
    1   gradient check failed / generic failure
    2   usage error (unknown subcommand or flag)
    3   file system error
    10  dimension error          16  SMILES parse error
    11  structural error         17  input error
    12  domain error             18  data error
    13  contract error           19  config error
    14  model config error       20  checkpoint error
    15  training error           21  undefined metric

Errors are reported on stderr as one line:
``error code=<n> kind=<ExceptionClass> message=<text>``.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, TrainConfig, load_config
from .data import DtaDataset, convert_matrix_format, load_canonical_tsv, load_deepdta_dir, write_canonical_tsv
from .errors import DtaError, InputError
from .protein import read_contact_map

log = logging.getLogger("dtaprompt")

IO_ERROR = 3


def _exit_table() -> str:
    return __doc__.split("Exit codes", 1)[1].split("Errors are", 1)[0].rstrip()


# ---------------------------------------------------------------------------
# convert


def _read_lines_or_json(path: Path) -> tuple[list[str], list[str] | None]:
    text = path.read_text(encoding="utf-8").strip()
    if text.startswith("{"):
        import json

        d = json.loads(text, object_pairs_hook=dict)
        return list(d.values()), list(d.keys())
    return [ln.strip() for ln in text.splitlines() if ln.strip()], None


def cmd_convert(args) -> int:
    if args.deepdta:
        ds = load_deepdta_dir(args.deepdta, transform=args.transform, split=args.split, seed=args.split_seed)
    else:
        if not (args.ligands and args.proteins and args.matrix):
            raise InputError("convert needs --deepdta DIR or all of --ligands, --proteins, --matrix")
        smiles, d_ids = _read_lines_or_json(Path(args.ligands))
        seqs, t_ids = _read_lines_or_json(Path(args.proteins))
        y = np.loadtxt(args.matrix, dtype=np.float64, ndmin=2)
        ds = convert_matrix_format(
            smiles,
            seqs,
            y,
            args.transform or "none",
            {"seed": args.split_seed, "train_fraction": args.train_fraction},
            d_ids,
            t_ids,
        )
    write_canonical_tsv(ds, args.out)
    counts = ds.counts()
    print(f"wrote {len(ds.samples)} samples (train={counts['train']} test={counts['test']}) to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# shared loading


def _run_config(args) -> RunConfig:
    rc = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {}
    for key in ("epochs", "lr", "batch_size", "eval_every", "threshold_p"):
        v = getattr(args, key, None)
        if v is not None:
            overrides[key] = v
    if overrides:
        rc.train = rc.train.replace(**overrides)
    return rc


def _dataset(path, contact_map_dir: str = "") -> DtaDataset:
    if not path:
        raise InputError("no dataset given (use --data or 'dataset =' in the config)")
    ds = load_canonical_tsv(path)
    if contact_map_dir:
        for t in ds.targets:
            p = Path(contact_map_dir) / f"{t}.cmap"
            if p.exists():
                ds.contact_maps[t] = str(p)
    return ds


def _load_checkpoint(path):
    from .training import Checkpoint

    return Checkpoint.load(path)


# ---------------------------------------------------------------------------
# train / eval


def _summary(name: str, values) -> str:
    v = np.asarray(values, dtype=np.float64)
    return f"{name}={v.mean():.6g}±{v.std():.3g}"


def cmd_train(args) -> int:
    from .training import LOG_HEADER, Predictor, train

    rc = _run_config(args)
    ds = _dataset(args.data or rc.dataset, rc.contact_map_dir)
    seeds = args.seed if args.seed else [rc.train.seed]
    out = Path(args.out or rc.train.checkpoint_path or Path(rc.output_dir or ".") / "model.ckpt")
    reports = []
    for seed in seeds:
        cfg = rc.train.replace(seed=seed)
        ck_path = out if len(seeds) == 1 else out.with_name(f"{out.stem}-seed{seed}{out.suffix}")
        log_path = Path(args.log) if args.log and len(seeds) == 1 else ck_path.with_suffix(ck_path.suffix + ".log")
        resume = _load_checkpoint(args.resume) if args.resume else None
        ck_path.parent.mkdir(parents=True, exist_ok=True)
        mode = "a" if resume is not None and log_path.exists() else "w"
        with open(log_path, mode, encoding="utf-8") as fh:
            if mode == "w":
                fh.write(LOG_HEADER + "\n")

            def emit(line, fh=fh):
                fh.write(line + "\n")
                fh.flush()
                if args.verbose:
                    print(line)

            ck, _ = train(ds, cfg, resume=resume, on_epoch=emit)
        ck.save(ck_path)
        print(f"seed {seed}: checkpoint {ck_path} (epoch {ck.epoch}), log {log_path}")
        if len(seeds) > 1 and ds.split("test"):
            reports.append(Predictor(ck).evaluate(ds, "test"))
    if reports:
        print(
            "test over seeds "
            + " ".join(_summary(k, [getattr(r, k) for r in reports]) for k in ("mse", "ci", "r2m", "pearson"))
        )
    return 0


def cmd_eval(args) -> int:
    from .training import Predictor

    reports = []
    for path in args.checkpoint:
        ck = _load_checkpoint(path)
        ds = _dataset(args.data, args.contact_map_dir or "")
        reports.append(Predictor(ck).evaluate(ds, args.split))
    if len(reports) == 1:
        rep = reports[0]
        text, record = rep.to_text(), rep.to_record()
    else:
        keys = ("mse", "ci", "r2m", "pearson")
        text = "".join(
            f"{k}_mean={float(np.mean([getattr(r, k) for r in reports]))!r}\n"
            f"{k}_std={float(np.std([getattr(r, k) for r in reports]))!r}\n"
            for k in keys
        ) + f"n_checkpoints={len(reports)}\nn_samples={reports[0].n_samples}\n"
        record = "\n".join(r.to_record() for r in reports)
    if args.report:
        base = Path(args.report)
        base.parent.mkdir(parents=True, exist_ok=True)
        base.with_suffix(".txt").write_text(text, encoding="utf-8")
        base.with_suffix(".jsonl").write_text(record + "\n", encoding="utf-8")
    sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------
# predict / embed


def _cold_label(cold_d: bool, cold_t: bool) -> str:
    return {(False, False): "none", (True, False): "drug", (False, True): "target", (True, True): "both"}[(cold_d, cold_t)]


def cmd_predict(args) -> int:
    from .training import Predictor

    pred = Predictor(_load_checkpoint(args.checkpoint))
    pairs = []
    if args.pairs:
        for lineno, line in enumerate(Path(args.pairs).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) not in (2, 3):
                raise InputError(f"{args.pairs}:{lineno}: expected smiles<TAB>sequence[<TAB>contact_map]")
            pairs.append((parts[0].strip(), parts[1].strip(), parts[2].strip() if len(parts) == 3 else None))
    else:
        if not (args.smiles and args.sequence):
            raise InputError("predict needs --smiles and --sequence, or --pairs FILE")
        pairs.append((args.smiles, args.sequence, args.contact_map))
    for smi, seq, cmap in pairs:
        cm = read_contact_map(cmap) if cmap else None
        value, cold_d, cold_t = pred.predict(smi, seq, cm)
        print(f"{value!r}\tcold_start={_cold_label(cold_d, cold_t)}")
    return 0


def cmd_embed(args) -> int:
    from .training import Predictor

    ck = _load_checkpoint(args.checkpoint)
    ds = _dataset(args.data, args.contact_map_dir or "")
    samples, fused = Predictor(ck).embed(ds, args.split)
    strong = ck.config.strong_threshold if args.strong_threshold is None else args.strong_threshold
    width = fused.shape[1] if len(samples) else 3 * ck.config.embed_dim
    header = ["drug_id", "target_id"] + [f"z{k}" for k in range(width)] + ["label", "strong"]
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("\t".join(header) + "\n")
        for s, row in zip(samples, fused):
            cols = [s.drug_id, s.target_id] + [repr(float(v)) for v in row]
            cols += [repr(s.affinity), "1" if s.affinity >= strong else "0"]
            fh.write("\t".join(cols) + "\n")
    print(f"wrote {len(samples)} rows x {width} embedding columns to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# gradcheck


def cmd_gradcheck(args) -> int:
    from .gradcheck import format_table, model_gradcheck, op_suite

    rows = op_suite(seed=args.seed)
    if args.model:
        from .fixtures import four_pair_fixture
        from .training import Trainer

        ds = four_pair_fixture()
        small = TrainConfig(seed=args.seed, embed_dim=8, n_heads=2, d_ff=16, head_hidden=(16, 8))
        for r in model_gradcheck(Trainer(ds, small), ds.split("train")):
            r.name = "model[narrow]." + r.name
            rows.append(r)
        full = Trainer(ds, TrainConfig(seed=args.seed))
        for r in model_gradcheck(full, ds.split("train"), entries_per_param=args.samples, seed=args.seed):
            r.name = "model[full]." + r.name
            rows.append(r)
    print(format_table(rows))
    failed = [r.name for r in rows if not r.passed]
    print(f"{len(rows) - len(failed)}/{len(rows)} passed")
    return 1 if failed else 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="dtaprompt",
        description="Drug-target affinity prediction: data conversion, training, evaluation and export.",
        epilog="exit codes:" + _exit_table(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr / echo epoch lines")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    c = sub.add_parser("convert", help="raw drug x target matrix -> canonical TSV")
    c.add_argument("--deepdta", help="directory with ligands_can.txt, proteins.txt, Y and optional folds/")
    c.add_argument("--ligands", help="SMILES list (one per line, or a JSON id->SMILES object)")
    c.add_argument("--proteins", help="sequence list (one per line, or a JSON id->sequence object)")
    c.add_argument("--matrix", help="whitespace-separated affinity matrix; 'nan' marks missing cells")
    c.add_argument("--transform", choices=["kd_to_pkd", "none"], default=None)
    c.add_argument("--split", choices=["official", "random"], default="official")
    c.add_argument("--split-seed", type=int, default=0)
    c.add_argument("--train-fraction", type=float, default=0.837)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_convert)

    t = sub.add_parser("train", help="train a model; writes checkpoint and epoch log")
    t.add_argument("--config")
    t.add_argument("--data", help="canonical TSV (overrides 'dataset' in the config)")
    t.add_argument("--seed", type=int, nargs="+", help="one or more seeds; several seeds report mean±std")
    t.add_argument("--out", help="checkpoint path")
    t.add_argument("--log", help="epoch log path (default: <checkpoint>.log)")
    t.add_argument("--resume", help="checkpoint to resume from")
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", type=int, dest="batch_size")
    t.add_argument("--eval-every", type=int, dest="eval_every")
    t.add_argument("--threshold-p", type=float, dest="threshold_p")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate checkpoint(s) on a split")
    e.add_argument("--checkpoint", required=True, nargs="+")
    e.add_argument("--data", required=True)
    e.add_argument("--split", choices=["train", "test"], default="test")
    e.add_argument("--report", help="report base path; writes <base>.txt and <base>.jsonl")
    e.add_argument("--contact-map-dir")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("predict", help="predict affinity for drug/target pairs")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--smiles")
    r.add_argument("--sequence")
    r.add_argument("--contact-map")
    r.add_argument("--pairs", help="TSV of smiles<TAB>sequence[<TAB>contact_map] lines")
    r.set_defaults(func=cmd_predict)

    g = sub.add_parser("gradcheck", help="finite-difference check of every op (and optionally the model)")
    g.add_argument("--seed", type=int, default=42)
    g.add_argument("--model", action="store_true", help="also check the full model loss on the 4-pair fixture")
    g.add_argument("--samples", type=int, default=16, help="entries per parameter for the full-width model")
    g.set_defaults(func=cmd_gradcheck)

    m = sub.add_parser("embed", help="export pre-head fused pair embeddings as TSV")
    m.add_argument("--checkpoint", required=True)
    m.add_argument("--data", required=True)
    m.add_argument("--split", choices=["train", "test"], default="test")
    m.add_argument("--out", required=True)
    m.add_argument("--strong-threshold", type=float, help="label >= this is 'strong' (default from config)")
    m.add_argument("--contact-map-dir")
    m.set_defaults(func=cmd_embed)
    return p


def _one_line(text: str) -> str:
    return " ".join(str(text).split())


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DtaError as e:
        print(f"error code={e.exit_code} kind={type(e).__name__} message={_one_line(e)}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"error code={IO_ERROR} kind={type(e).__name__} message={_one_line(e)}", file=sys.stderr)
        return IO_ERROR


if __name__ == "__main__":
    sys.exit(main())
