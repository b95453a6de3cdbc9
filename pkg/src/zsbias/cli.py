"""Command-line front end.

Exit codes:
    0  success
    1  invalid arguments or configuration
    2  I/O error (missing/unreadable/malformed file, bad mask)
    3  degenerate input (e.g. constant volume)
    4  optimization diverged
    5  gradient check failed

Progress goes to stderr; stdout carries only tables.
"""
import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from . import gradcheck, network, synthetic
from .config import CorrectionConfig
from .correction import correct_volume
from .errors import (
    DegenerateInputError,
    InvalidArgumentError,
    MaskError,
    OptimizationDivergedError,
    VolumeIOError,
)
from .evaluation import evaluate_correction
from .volume_io import read_mask, read_volume, write_mask, write_volume

log = logging.getLogger("zsbias")

EXIT_OK, EXIT_ARGS, EXIT_IO, EXIT_DEGENERATE, EXIT_DIVERGED, EXIT_GRADCHECK = range(6)

SIMULATE_FILES = {
    "clean": "clean.nii.gz",
    "bias": "bias.nii.gz",
    "corrupted": "corrupted.nii.gz",
    "mask": "mask.nii.gz",
    "spec": "spec.json",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ARGS, f"{self.prog}: error: {message}\n")


def exit_code_for(exc):
    if isinstance(exc, (UsageError, InvalidArgumentError)):
        return EXIT_ARGS
    if isinstance(exc, DegenerateInputError):
        return EXIT_DEGENERATE
    if isinstance(exc, OptimizationDivergedError):
        return EXIT_DIVERGED
    if isinstance(exc, (VolumeIOError, MaskError, OSError)):
        return EXIT_IO
    raise exc


# --------------------------------------------------------------------------
# correct
# --------------------------------------------------------------------------

@dataclass
class RunConfig:
    correction: CorrectionConfig
    inputs: list
    outputs: list
    bias_outs: list = field(default_factory=list)
    trace_outs: list = field(default_factory=list)
    params_outs: list = field(default_factory=list)
    jobs: int = 1


def load_config_file(path):
    try:
        with open(path) as fh:
            values = json.load(fh)
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(values, dict):
        raise UsageError(f"config file {path} must hold a flat JSON object")
    return values


def build_run_config(args):
    values = load_config_file(args.config) if args.config else {}
    for key, flag in (("opt_steps", args.iters), ("learning_rate", args.lr), ("seed", args.seed)):
        if flag is not None:
            values[key] = flag
    cfg = CorrectionConfig.from_flat(values)

    n = len(args.input)
    if len(args.output) != n:
        raise UsageError(f"got {n} input(s) but {len(args.output)} output(s)")
    for name in ("bias_out", "trace_out", "params_out"):
        given = getattr(args, name) or []
        if given and len(given) != n:
            raise UsageError(f"--{name.replace('_', '-')} needs one path per input")
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    return RunConfig(cfg, args.input, args.output, args.bias_out or [],
                     args.trace_out or [], args.params_out or [], args.jobs)


def _correct_one(run, i):
    src = run.inputs[i]
    try:
        volume = read_volume(src)
        result = correct_volume(volume, run.correction)
        write_volume(result.corrected, run.outputs[i])
        if run.bias_outs:
            write_volume(result.bias, run.bias_outs[i])
        if run.trace_outs:
            with open(run.trace_outs[i], "w") as fh:
                json.dump(result.trace_dicts(), fh, indent=1)
        if run.params_outs:
            network.dump_params(result.params, run.params_outs[i])
    except Exception as exc:  # mapped to an exit code below
        code = exit_code_for(exc)
        print(f"zsbias correct: {src}: {exc}", file=sys.stderr)
        return code
    print(
        f"{src}: elapsed {result.elapsed_seconds:.2f} s, "
        f"final loss {result.loss_trace[-1].total:.6f}",
        file=sys.stderr,
    )
    return EXIT_OK


def cmd_correct(args):
    run = build_run_config(args)
    if run.jobs == 1 or len(run.inputs) == 1:
        codes = [_correct_one(run, i) for i in range(len(run.inputs))]
    else:
        with ThreadPoolExecutor(max_workers=run.jobs) as pool:
            codes = list(pool.map(lambda i: _correct_one(run, i), range(len(run.inputs))))
    return next((c for c in codes if c != EXIT_OK), EXIT_OK)


# --------------------------------------------------------------------------
# simulate
# --------------------------------------------------------------------------

def parse_shape(text):
    try:
        parts = [int(p) for p in text.replace("x", ",").split(",") if p.strip()]
    except ValueError as exc:
        raise UsageError(f"invalid shape {text!r}") from exc
    if len(parts) == 1:
        parts *= 3
    if len(parts) != 3:
        raise UsageError(f"shape needs 1 or 3 extents, got {text!r}")
    return tuple(parts)


def cmd_simulate(args):
    shape = parse_shape(args.shape)
    case = synthetic.simulate(shape, args.bias_strength, args.noise, args.seed)
    os.makedirs(args.out_dir, exist_ok=True)
    path = {k: os.path.join(args.out_dir, v) for k, v in SIMULATE_FILES.items()}
    write_volume(case.clean, path["clean"])
    write_volume(case.bias, path["bias"])
    write_volume(case.corrupted, path["corrupted"])
    write_mask(case.mask, path["mask"], like=case.clean)
    with open(path["spec"], "w") as fh:
        json.dump(case.spec_dict(), fh, indent=2, sort_keys=True)
    print(f"wrote {len(path)} files to {args.out_dir}", file=sys.stderr)
    return EXIT_OK


# --------------------------------------------------------------------------
# evaluate
# --------------------------------------------------------------------------

def load_label_spec(text):
    """Inline JSON or a JSON file; accepts ``{"1": "GM", ...}`` or a
    simulate ``spec.json`` holding ``label_names``."""
    if text is None:
        return None
    if os.path.isfile(text):
        with open(text) as fh:
            text = fh.read()
    try:
        values = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"--labels is neither a JSON file nor inline JSON: {exc}") from exc
    values = values.get("label_names", values)
    try:
        return {int(k): str(v) for k, v in values.items()}
    except (AttributeError, ValueError) as exc:
        raise UsageError("--labels must map integer labels to names") from exc


def cmd_evaluate(args):
    labels = load_label_spec(args.labels)
    image = read_volume(args.image)
    corrected = read_volume(args.corrected)
    mask = read_mask(args.mask, labels, reference=image)
    clean = read_volume(args.clean) if args.clean else None
    true_bias = read_volume(args.true_bias) if args.true_bias else None
    report = evaluate_correction(
        image, corrected, mask, clean, true_bias,
        config={"image": args.image, "corrected": args.corrected, "mask": args.mask,
                "clean": args.clean, "true_bias": args.true_bias},
    )
    print(report.to_table())
    for t in report.tissues:
        if t.error:
            print(f"warning: {t.name}: {t.error}", file=sys.stderr)
    if args.json_out:
        with open(args.json_out, "w") as fh:
            fh.write(report.to_json() + "\n")
    return EXIT_OK


# --------------------------------------------------------------------------
# gradcheck
# --------------------------------------------------------------------------

def cmd_gradcheck(args):
    if args.inject_fault and args.inject_fault not in gradcheck.CHECKS:
        raise UsageError(f"unknown op {args.inject_fault!r}; choose from {sorted(gradcheck.CHECKS)}")
    results = gradcheck.run_all(args.seed, args.size, fault=args.inject_fault)
    width = max(len(r.name) for r in results)
    print(f"{'op'.ljust(width)}  max_rel_err  checked  skipped  status")
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.name.ljust(width)}  {r.max_rel_error:11.3e}  {r.checked:7d}  {r.skipped:7d}  {status}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"gradient check failed for: {', '.join(failed)}", file=sys.stderr)
        return EXIT_GRADCHECK
    return EXIT_OK


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------

def build_parser():
    parser = _Parser(prog="zsbias", description="Zero-shot bias-field correction for 3D volumes.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("correct", help="correct one or more NIfTI volumes")
    p.add_argument("--input", nargs="+", required=True)
    p.add_argument("--output", nargs="+", required=True)
    p.add_argument("--bias-out", nargs="+")
    p.add_argument("--trace-out", nargs="+", help="JSON loss trace per input")
    p.add_argument("--params-out", nargs="+", help="flat little-endian float32 parameter dump")
    p.add_argument("--iters", type=int, help="optimization steps (default 100)")
    p.add_argument("--lr", type=float, help="Adam learning rate (default 0.005)")
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="flat JSON config; flags override its values")
    p.add_argument("--jobs", type=int, default=1, help="volumes corrected concurrently")
    p.set_defaults(func=cmd_correct)

    p = sub.add_parser("simulate", help="write a synthetic phantom, bias field and corrupted image")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--shape", default="64", help="N or D,H,W (default 64)")
    p.add_argument("--bias-strength", type=float, default=0.3)
    p.add_argument("--noise", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", help="per-tissue coefficient of variation report")
    p.add_argument("--image", required=True)
    p.add_argument("--corrected", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--labels", help="label names: JSON file/inline mapping, or a simulate spec.json")
    p.add_argument("--clean", help="clean reference (simulation only)")
    p.add_argument("--true-bias", help="true bias field (simulation only)")
    p.add_argument("--json-out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference check of every backward pass")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=6, help="spatial extent of random test tensors")
    p.add_argument("--inject-fault", metavar="OP", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except Exception as exc:
        code = exit_code_for(exc)
        print(f"zsbias {args.command}: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
