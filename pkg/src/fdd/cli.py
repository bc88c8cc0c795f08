"""Command-line front end.

Exit codes: 0 success, 1 partial failure, 2 usage error, 3 I/O or format error.
``FDD_THREADS`` sets the default ``--threads``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import align, evalkit, formats, gallery, matchkit, net
from .core import BinaryFddTemplate, FddTemplate, PoseTransform

EXIT_OK, EXIT_PARTIAL, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("fdd")


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_IO):
        super().__init__(message)
        self.code = code


class LockError(CliError):
    pass


def _err(msg: str) -> None:
    print(f"fdd: {msg}", file=sys.stderr)


def _load_template(path):
    try:
        return formats.load_template(path)
    except (OSError, formats.FormatError) as exc:
        raise CliError(f"cannot load template {path}: {exc}") from exc


def _fmt(score: float, raw: bool) -> str:
    return repr(float(score)) if raw else f"{score:.6f}"


# --- extract -----------------------------------------------------------------


def _pose_for(path: Path, img, args) -> PoseTransform:
    if args.pose is not None:
        return PoseTransform.from_degrees(*args.pose)
    if args.identity_pose:
        return PoseTransform.identity_for(img.shape)
    sidecar = Path(str(path) + ".pose")
    if not sidecar.exists():
        raise FileNotFoundError(f"missing pose sidecar {sidecar}")
    return align.read_pose_file(sidecar)


def _load_weights(args) -> net.WeightStore:
    if args.weights is not None:
        try:
            return net.load_weights(args.weights, args.c)
        except (OSError, formats.FormatError, net.WeightError) as exc:
            raise CliError(f"cannot use weights {args.weights}: {exc}") from exc
    return net.WeightStore.random(args.c, args.seed)


def extract_one(path: Path, ws: net.WeightStore, args) -> Path:
    img = align.read_image(path, args.ppi)
    img = align.rescale_to_500ppi(img)
    pose = _pose_for(path, img, args)
    aligned = align.align_and_crop(img, pose)
    t = net.extract_template(aligned, ws, args.c, args.mask_threshold, {"source": path.name, "subject": path.stem})
    if args.binary:
        t = net.binarize_template(t)
    out = Path(args.out) / f"{path.stem}.fdd"
    formats.save_template(t, out)
    if t.empty_mask:
        _err(f"warning: {path}: empty foreground mask")
    return out


def cmd_extract(args) -> int:
    Path(args.out).mkdir(parents=True, exist_ok=True)
    ws = _load_weights(args)
    paths = [Path(p) for p in args.images]

    def work(p: Path):
        try:
            return p, extract_one(p, ws, args), None
        except Exception as exc:  # reported per file, batch continues
            return p, None, exc

    if args.threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(args.threads) as pool:
            results = list(pool.map(work, paths))
    else:
        results = [work(p) for p in paths]
    failed = 0
    for p, out, exc in results:
        if exc is None:
            print(f"ok {p} -> {out}")
        else:
            failed += 1
            _err(f"FAILED {p}: {exc}")
    if failed == 0:
        return EXIT_OK
    return EXIT_IO if failed == len(paths) else EXIT_PARTIAL


# --- match / identify ----------------------------------------------------------


def cmd_match(args) -> int:
    a = _load_template(args.a)
    b = _load_template(args.b)
    if a.c != b.c:
        raise CliError(f"channel counts differ ({a.c} vs {b.c})", EXIT_USAGE)
    binary = args.binary or isinstance(a, BinaryFddTemplate) or isinstance(b, BinaryFddTemplate)
    if binary:
        a = a if isinstance(a, BinaryFddTemplate) else net.binarize_template(a)
        b = b if isinstance(b, BinaryFddTemplate) else net.binarize_template(b)
        res = matchkit.match_binary(a, b)
    else:
        res = matchkit.match(a, b)
    if res.empty_overlap:
        _err("warning: masks do not overlap; score is 0")
    print(_fmt(res.score, args.raw))
    return EXIT_OK


def _load_gallery(path):
    try:
        return gallery.load(path)
    except (OSError, formats.FormatError) as exc:
        raise CliError(f"cannot load gallery {path}: {exc}") from exc


def cmd_identify(args) -> int:
    q = _load_template(args.probe)
    g = _load_gallery(args.gallery)
    if g.binary and isinstance(q, FddTemplate):
        q = net.binarize_template(q)
    elif not g.binary and isinstance(q, BinaryFddTemplate):
        raise CliError("binary probe cannot search a float gallery", EXIT_USAGE)
    if q.c != g.c:
        raise CliError(f"probe has c={q.c}, gallery has c={g.c}", EXIT_USAGE)
    print("rank,id,score")
    if len(g) == 0:
        _err("warning: gallery is empty")
        return EXIT_OK
    for cand in g.identify(q, args.top, args.threads):
        print(f"{cand.rank},{cand.id},{_fmt(cand.score, args.raw)}")
    return EXIT_OK


# --- enroll ----------------------------------------------------------------------


@contextmanager
def gallery_lock(path: Path):
    lock = Path(str(path) + ".lock")
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise LockError(f"gallery {path} is locked by another writer ({lock})") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        try:
            os.unlink(lock)
        except FileNotFoundError:
            pass


def cmd_enroll(args) -> int:
    path = Path(args.gallery)
    templates = [_load_template(p) for p in args.templates]
    if args.id and len(args.id) != len(templates):
        raise CliError("--id must be given once per template", EXIT_USAGE)
    ids = args.id or [t.meta.get("subject", Path(p).stem) for t, p in zip(templates, args.templates)]
    with gallery_lock(path):
        if path.exists():
            g = _load_gallery(path)
        else:
            binary = args.binary or any(isinstance(t, BinaryFddTemplate) for t in templates)
            g = gallery.new_gallery(templates[0].c, binary)
        if g.binary:
            templates = [net.binarize_template(t) if isinstance(t, FddTemplate) else t for t in templates]
        elif any(isinstance(t, BinaryFddTemplate) for t in templates):
            raise CliError("cannot enroll binary templates into a float gallery", EXIT_USAGE)
        try:
            g.enroll_many(templates, ids)
        except ValueError as exc:
            raise CliError(str(exc), EXIT_USAGE) from exc
        gallery.save(g, path)
    print(f"enrolled {len(templates)} into {path} (n={len(g)})")
    return EXIT_OK


# --- eval / fuse -----------------------------------------------------------------


def _read_scores(path):
    try:
        return evalkit.read_score_csv(path)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot read scores {path}: {exc}") from exc


def cmd_eval(args) -> int:
    rows = _read_scores(args.scores)
    fars = args.far or [0.001]
    ranks = args.rank or [1]
    try:
        report = evalkit.metrics_report(rows, fars, ranks)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_USAGE) from exc
    for name, value in report:
        print(f"{name}: {value:.6f}" if not name.startswith("n_") else f"{name}: {int(value)}")
    if args.out:
        lines = ["metric,value"] + [f"{n},{v!r}" for n, v in report]
        Path(args.out).write_text("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_fuse(args) -> int:
    a = _read_scores(args.a)
    b = {(r.probe_id, r.gallery_id): r for r in _read_scores(args.b)}
    wa, wb = args.weights
    out = []
    for r in a:
        other = b.get((r.probe_id, r.gallery_id))
        if other is None:
            raise CliError(f"pair ({r.probe_id}, {r.gallery_id}) missing from {args.b}", EXIT_USAGE)
        if other.label != r.label:
            raise CliError(f"label mismatch for ({r.probe_id}, {r.gallery_id})", EXIT_USAGE)
        try:
            s = matchkit.fuse([(r.score, wa), (other.score, wb)])
        except ValueError as exc:
            raise CliError(str(exc), EXIT_USAGE) from exc
        out.append(evalkit.ScoreRow(r.probe_id, r.gallery_id, s, r.label))
    if len(b) != len(a):
        raise CliError("score files cover different pairs", EXIT_USAGE)
    evalkit.write_score_csv(args.out, out)
    print(f"fused {len(out)} pairs -> {args.out}")
    return EXIT_OK


# --- bench / weights -----------------------------------------------------------


def cmd_bench(args) -> int:
    from .bench import run_bench

    rep = run_bench(args.n, args.c, args.probes, args.seed, args.threads, args.extract, args.repeats)
    text = json.dumps(rep.as_dict(), indent=2, sort_keys=True)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
    return EXIT_OK


def cmd_make_weights(args) -> int:
    ws = net.WeightStore.zeros(args.c) if args.zeros else net.WeightStore.random(args.c, args.seed)
    ws.save(args.out)
    print(f"wrote {len(ws)} tensors to {args.out}")
    return EXIT_OK


def cmd_manifest(args) -> int:
    for name, shape in net.param_shapes(args.c).items():
        print(f"{name}\t{'x'.join(map(str, shape))}")
    return EXIT_OK


# --- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    threads_default = gallery.default_threads()
    p = argparse.ArgumentParser(prog="fdd", description="Fixed-length dense fingerprint descriptors")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def threads(sp):
        sp.add_argument("--threads", type=int, default=threads_default, help="worker threads (default $FDD_THREADS or 1)")

    sp = sub.add_parser("extract", help="images -> FDD1 template files")
    sp.add_argument("images", nargs="+")
    src = sp.add_mutually_exclusive_group(required=True)
    src.add_argument("--weights", help="FDDW weight file")
    src.add_argument("--seed", type=int, help="use seeded random weights (testing only)")
    pose = sp.add_mutually_exclusive_group()
    pose.add_argument("--pose", type=float, nargs=3, metavar=("CX", "CY", "DEG"), help="pose for every image")
    pose.add_argument("--identity-pose", action="store_true", help="centre of image, no rotation")
    sp.add_argument("--c", type=int, default=6)
    sp.add_argument("--ppi", type=float, default=500.0)
    sp.add_argument("--mask-threshold", type=float, default=0.5)
    sp.add_argument("--binary", action="store_true", help="write binarized templates")
    sp.add_argument("--out", required=True, help="output directory")
    threads(sp)
    sp.set_defaults(func=cmd_extract)

    sp = sub.add_parser("match", help="score two templates")
    sp.add_argument("a")
    sp.add_argument("b")
    sp.add_argument("--binary", action="store_true")
    sp.add_argument("--raw", action="store_true", help="full precision")
    sp.set_defaults(func=cmd_match)

    sp = sub.add_parser("identify", help="search a gallery")
    sp.add_argument("probe")
    sp.add_argument("gallery")
    sp.add_argument("--top", type=int, default=10)
    sp.add_argument("--raw", action="store_true")
    threads(sp)
    sp.set_defaults(func=cmd_identify)

    sp = sub.add_parser("enroll", help="append templates to a gallery file")
    sp.add_argument("gallery")
    sp.add_argument("templates", nargs="+")
    sp.add_argument("--id", action="append", help="id per template (repeat)")
    sp.add_argument("--binary", action="store_true", help="create a binary gallery")
    sp.set_defaults(func=cmd_enroll)

    sp = sub.add_parser("eval", help="TAR@FAR and rank-k from a score CSV")
    sp.add_argument("scores")
    sp.add_argument("--far", type=float, action="append")
    sp.add_argument("--rank", type=int, action="append")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("fuse", help="weighted score-level fusion of two score CSVs")
    sp.add_argument("a")
    sp.add_argument("b")
    sp.add_argument("--weights", type=float, nargs=2, default=(0.5, 0.5))
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_fuse)

    sp = sub.add_parser("bench", help="timing report on synthetic templates")
    sp.add_argument("--n", type=int, default=100_000)
    sp.add_argument("--c", type=int, default=6)
    sp.add_argument("--probes", type=int, default=64)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--extract", type=int, default=1, help="number of extractions to time")
    sp.add_argument("--repeats", type=int, default=2)
    sp.add_argument("--out")
    threads(sp)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("make-weights", help="write a seeded random (or zero) FDDW file")
    sp.add_argument("out")
    sp.add_argument("--c", type=int, default=6)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--zeros", action="store_true")
    sp.set_defaults(func=cmd_make_weights)

    sp = sub.add_parser("manifest", help="list parameter tensor names and shapes")
    sp.add_argument("--c", type=int, default=6)
    sp.set_defaults(func=cmd_manifest)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "threads", 1) < 1:
        parser.error("--threads must be >= 1")
    if getattr(args, "top", 1) < 1:
        parser.error("--top must be >= 1")
    if hasattr(args, "mask_threshold") and not 0 < args.mask_threshold < 1:
        parser.error("--mask-threshold must lie in (0, 1)")
    try:
        return args.func(args)
    except CliError as exc:
        _err(str(exc))
        return exc.code
    except (OSError, formats.FormatError) as exc:
        _err(str(exc))
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
