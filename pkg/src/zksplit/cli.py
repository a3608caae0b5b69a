"""Command-line entry point.

Subcommands:
  train           run protocol rounds, write the run log and checkpoint
  bench           run the benchmark grid and emit CSV/JSON tables
  prove           build a proof for a statement/witness file pair
  verify          check a proof file against a statement file
  ledger verify   check a persisted hash chain
  circuit export  dump a circuit description as JSON

Exit codes: 0 success, 1 usage error, 2 verification failure, 3 runtime
error.  Configuration comes from an optional JSON file plus flag
overrides; the fully resolved config is echoed as a run manifest so any
run can be reproduced from its output directory alone.
"""

from __future__ import annotations

import argparse
import json
import signal
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .backend import (
    DecodeError,
    Proof,
    Statement,
    Verdict,
    backend_capabilities,
    get_backend,
    load_verifying_key,
)
from .bench import BenchError, emit, format_summary, run_benchmark, summarize
from .circuit import (
    CircuitConstants,
    ConstraintSystem,
    build_aggregation_circuit,
    build_protocol_circuit,
    build_update_circuit,
)
from .config import MODES, ConfigError, SimConfig
from .ledger import Chain
from .nn import save_checkpoint
from .protocol import Trainer

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VERIFY_FAILED = 2
EXIT_RUNTIME = 3


def _load_config(args) -> SimConfig:
    base = {}
    if getattr(args, "config", None):
        base = json.loads(Path(args.config).read_text())
    cfg = SimConfig.from_dict(base)
    overrides = {}
    for key in ("mode", "seed", "out_dir", "epochs", "rounds", "eta", "reps"):
        val = getattr(args, key, None)
        if val is not None:
            overrides[key] = val
    if getattr(args, "clients", None) is not None:
        overrides["num_clients"] = args.clients
    if getattr(args, "m", None) is not None:
        overrides["m"] = args.m
    if overrides:
        cfg = replace(cfg, **overrides)
    return cfg


def _write_manifest(cfg: SimConfig, out: Path) -> None:
    manifest = {"version": __version__, "config": cfg.to_dict()}
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def _cmd_train(args) -> int:
    cfg = _load_config(args)
    out = Path(cfg.out_dir) if cfg.out_dir else None
    if out:
        _write_manifest(cfg, out)
    trainer = Trainer(cfg)
    reports = trainer.train()
    if out:
        save_checkpoint(trainer.model, str(out), "model",
                        extra={"quant": trainer.wq_params.to_dict()})
    summary = {
        "rounds": len(reports),
        "final_loss": reports[-1].loss if reports else None,
        "verdicts": {
            v: sum(1 for r in reports for vv in r.verdicts.values() if vv == v)
            for v in ("Accepted", "RejectedProof", "MissingProof")
        },
        "stalled_rounds": sum(1 for r in reports if r.stalled),
    }
    if args.json:
        print(json.dumps(summary, indent=2))
    else:
        for r in reports:
            loss = f"{r.loss:.4f}" if r.loss is not None else "-"
            print(f"round {r.round_id}: loss={loss} verdicts={r.verdicts}")
        print(f"final loss: {summary['final_loss']}")
    return EXIT_OK


def _cmd_bench(args) -> int:
    cfg = _load_config(args)
    if args.m is not None:
        cfg = replace(cfg, m_grid=[args.m])
    if args.clients is not None:
        cfg = replace(cfg, client_grid=[args.clients], real_epoch_clients=[args.clients])
    records = []
    flushed = {"done": False}

    def flush(*_sig):
        if not flushed["done"] and cfg.out_dir:
            flushed["done"] = True
            emit(records, cfg.out_dir, cfg)
        if _sig:
            sys.exit(EXIT_RUNTIME)

    old = signal.signal(signal.SIGINT, flush)
    try:
        records.extend(run_benchmark(cfg, include_real_epoch=not args.no_real_epoch))
    finally:
        signal.signal(signal.SIGINT, old)
    stats = summarize(records)
    if cfg.out_dir:
        _write_manifest(cfg, Path(cfg.out_dir))
        paths = emit(records, cfg.out_dir, cfg)
        flushed["done"] = True
        if not args.json:
            print(f"wrote {', '.join(str(p) for p in paths)}")
    if args.json:
        print(json.dumps({"|".join(map(str, k)): v for k, v in stats.items()}, indent=2))
    else:
        print(format_summary(stats))
    return EXIT_OK


def _build_circuit_from_spec(spec: dict) -> ConstraintSystem:
    constants = CircuitConstants(**spec.get("constants", {}))
    kind = spec.get("kind", "composed")
    m = int(spec.get("m", 1))
    if kind == "aggregation":
        return build_aggregation_circuit(m, int(spec.get("n", 1)), constants)
    if kind == "update":
        return build_update_circuit(m, constants)
    if kind == "composed":
        return build_protocol_circuit(m, constants)
    raise ConfigError(f"unknown circuit kind {kind!r}")


def _cmd_prove(args) -> int:
    circuit = _build_circuit_from_spec(json.loads(Path(args.circuit).read_text()))
    statement = Statement(json.loads(Path(args.statement).read_text()))
    private = json.loads(Path(args.witness).read_text())
    from .circuit import generate_witness

    witness = generate_witness(circuit, statement.values, private)
    backend = get_backend(args.backend)
    pair = backend.setup(circuit, args.setup_seed.encode())
    proof = backend.prove(pair.proving_key, statement, witness)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "proof.bin").write_bytes(proof.to_bytes())
    (out / "vk.bin").write_bytes(pair.verifying_key.to_bytes())
    result = {
        "circuit_digest": circuit.digest(),
        "statement_digest": statement.digest(),
        "proof_size": proof.size_bytes,
        "prove_time": proof.prove_time,
        "files": ["proof.bin", "vk.bin"],
    }
    print(json.dumps(result, indent=2) if args.json else
          f"proof written to {out / 'proof.bin'} ({proof.size_bytes} bytes)")
    return EXIT_OK


def _cmd_verify(args) -> int:
    vk = load_verifying_key(Path(args.vk).read_bytes())
    statement = Statement(json.loads(Path(args.statement).read_text()))
    proof = Proof.from_bytes(Path(args.proof).read_bytes())
    backend = get_backend(proof.backend)
    verdict = backend.verify(vk, statement, proof)
    if args.json:
        print(json.dumps({"verdict": verdict.value}))
    else:
        print(verdict.value)
    return EXIT_OK if verdict is Verdict.ACCEPT else EXIT_VERIFY_FAILED


def _cmd_ledger_verify(args) -> int:
    chain = Chain.load(args.chain)
    ok = chain.verify()
    if args.json:
        print(json.dumps({"blocks": len(chain), "valid": ok}))
    else:
        print(f"{len(chain)} blocks: {'valid' if ok else 'INVALID'}")
    return EXIT_OK if ok else EXIT_VERIFY_FAILED


def _cmd_circuit_export(args) -> int:
    spec = {"kind": args.kind, "m": args.m, "n": args.n}
    if args.eta is not None:
        spec["constants"] = {"eta": args.eta}
    circuit = _build_circuit_from_spec(spec)
    text = json.dumps(circuit.to_json_dict(), indent=None if args.compact else 2)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
        print(f"wrote {args.out} ({circuit.num_wires} wires, "
              f"{len(circuit.constraints)} constraints)")
    else:
        print(text)
    return EXIT_OK


def _cmd_backends(args) -> int:
    caps = backend_capabilities()
    print(json.dumps(caps) if args.json else
          "\n".join(f"{k}: {'available' if v else 'unavailable'}" for k, v in caps.items()))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="zksplit",
        description="Verifiable split learning with proof-carrying cut-layer updates",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--mode", choices=MODES)
        p.add_argument("--clients", type=int)
        p.add_argument("--m", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--rounds", type=int)
        p.add_argument("--eta", type=int)
        p.add_argument("--out", dest="out_dir")
        p.add_argument("--json", action="store_true", help="machine-readable output")

    p_train = sub.add_parser("train", help="run training rounds")
    add_common(p_train)
    p_train.set_defaults(func=_cmd_train)

    p_bench = sub.add_parser("bench", help="run the benchmark grid")
    add_common(p_bench)
    p_bench.add_argument("--reps", type=int)
    p_bench.add_argument("--no-real-epoch", action="store_true")
    p_bench.set_defaults(func=_cmd_bench)

    p_prove = sub.add_parser("prove", help="prove a statement from files")
    p_prove.add_argument("--circuit", required=True, help="circuit spec JSON")
    p_prove.add_argument("--statement", required=True, help="statement values JSON")
    p_prove.add_argument("--witness", required=True, help="private input values JSON")
    p_prove.add_argument("--backend", default="mock", choices=["mock", "snark"])
    p_prove.add_argument("--setup-seed", default="setup")
    p_prove.add_argument("--out", required=True)
    p_prove.add_argument("--json", action="store_true")
    p_prove.set_defaults(func=_cmd_prove)

    p_verify = sub.add_parser("verify", help="verify a proof from files")
    p_verify.add_argument("--vk", required=True)
    p_verify.add_argument("--statement", required=True)
    p_verify.add_argument("--proof", required=True)
    p_verify.add_argument("--json", action="store_true")
    p_verify.set_defaults(func=_cmd_verify)

    p_ledger = sub.add_parser("ledger", help="ledger operations")
    ledger_sub = p_ledger.add_subparsers(dest="ledger_command", required=True)
    p_lv = ledger_sub.add_parser("verify", help="verify a persisted chain")
    p_lv.add_argument("chain", help="JSON-lines chain file")
    p_lv.add_argument("--json", action="store_true")
    p_lv.set_defaults(func=_cmd_ledger_verify)

    p_circuit = sub.add_parser("circuit", help="circuit operations")
    circuit_sub = p_circuit.add_subparsers(dest="circuit_command", required=True)
    p_ce = circuit_sub.add_parser("export", help="dump a circuit as JSON")
    p_ce.add_argument("--kind", default="composed",
                      choices=["aggregation", "update", "composed"])
    p_ce.add_argument("--m", type=int, default=4)
    p_ce.add_argument("--n", type=int, default=1)
    p_ce.add_argument("--eta", type=int)
    p_ce.add_argument("--compact", action="store_true")
    p_ce.add_argument("--out")
    p_ce.set_defaults(func=_cmd_circuit_export)

    p_back = sub.add_parser("backends", help="list backend availability")
    p_back.add_argument("--json", action="store_true")
    p_back.set_defaults(func=_cmd_backends)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except (ConfigError, ValueError, BenchError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE if isinstance(e, ConfigError) else EXIT_RUNTIME
    except (OSError, DecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
