#!/usr/bin/env python3
"""Dilatin - isometric dilations of commuting contraction tuples, checked to the last identity.

License: GPL-3.0
"""

import os
import re
import sys
from importlib import metadata
from pathlib import Path

from loguru import logger
from rich.console import Console

from dilatin.DataTypes import ExitCode
from dilatin.Modules.ArgumentParser import ArgumentParser, Config
from dilatin.Modules.BundleWriter import dump_bundle, write_ledger
from dilatin.Modules.CoExtension import assemble_predil
from dilatin.Modules.Functions import failures_table, format_bool, format_index, key_value_table, summary_table
from dilatin.Modules.Generators import emit_corpus, gen_separating_search, generate
from dilatin.Modules.HardySpace import brehmer_dilation, truncation_tail_bound
from dilatin.Modules.ManualException import IndexOutOfRange, ManualException
from dilatin.Modules.OperatorTuple import (
    OperatorTuple,
    SubsetMask,
    check_defect_identity,
    class_bnpq,
    dump_tuple,
    is_brehmer,
    is_pure,
    is_szego,
    load_tuple,
    reindex_pq,
    validate_tuple,
)
from dilatin.Modules.RegularWindow import assemble_theorem
from dilatin.Modules.Verification import ResidualLedger, sample_polynomials, von_neumann_check


def _get_version_from_pyproject() -> str:
    """Read version from pyproject.toml when package isn't installed."""
    try:
        pyproject_path = Path(__file__).parent.parent / "pyproject.toml"
        if pyproject_path.exists():
            content = pyproject_path.read_text()
            match = re.search(r'^version\s*=\s*["\']([^"\']+)["\']', content, re.MULTILINE)
            if match:
                return match.group(1)
    except Exception:
        pass
    return "N/A"


try:
    __version__ = metadata.version("dilatin")
except Exception:
    __version__ = _get_version_from_pyproject()


def load_input(config: Config) -> tuple[OperatorTuple, str]:
    if config.input == "gen":
        generated = generate(config.gen_spec())
        labels = ", ".join(f"{name}={value}" for name, value in generated.labels.items())
        logger.debug(f"Generated {config.recipe} tuple at seed {config.seed} ({labels})")
        return generated.t, f"{config.recipe} seed {config.seed}"

    return load_tuple(config.input), config.input


def resolve_pq(config: Config, t: OperatorTuple) -> tuple[int, int]:
    p = config.p or 1
    q = config.q or t.n
    if not 1 <= p < q <= t.n:
        raise IndexOutOfRange("Need 1 <= p < q <= n", p=p, q=q, n=t.n)
    return p, q


def report(console: Console, config: Config, command: str, ledger: ResidualLedger, rows, **extra) -> int:
    console.print(key_value_table(rows, title=f"dilatin {command}"))
    console.print(summary_table(ledger, title="Checks"))
    if not ledger.passed:
        console.print(failures_table(ledger))

    if config.out:
        write_ledger(config.out, command, config.to_dict(), ledger, **extra)

    status = "[green]all checks pass[/green]" if ledger.passed else "[red]verification failed[/red]"
    console.print(f"{len(ledger.entries)} checks: {status}")

    return ExitCode.ok if ledger.passed else ExitCode.verification_failed


def cmd_classify(config: Config, console: Console) -> int:
    t, source = load_input(config)
    tolerances = config.tolerances()
    ledger = ResidualLedger()

    validation = validate_tuple(t, tolerances.contr, tolerances.comm)
    for i, norm in enumerate(validation.norms, start=1):
        ledger.add(f"contraction[{i}]", "||T_i|| <= 1", max(norm - 1.0, 0.0), tolerances.contr, context=f"{norm:.6f}")
    for (i, j), residual in validation.commutators.items():
        ledger.add(f"commutator[{i},{j}]", "T_i T_j = T_j T_i", residual, tolerances.comm)

    szego = is_szego(t, tolerances.clamp)
    brehmer = is_brehmer(t, tolerances.clamp)
    pure = is_pure(t, tolerances.contr)

    rows = [
        ("Input", source),
        ("Operators", f"n={t.n}, dim={t.dim}"),
        ("Contractive", format_bool(validation.contractive)),
        ("Commuting", format_bool(validation.commuting)),
        ("Szego", format_bool(szego)),
        ("Brehmer", format_bool(brehmer.ok) + ("" if brehmer else f" (witness G={brehmer.witness})")),
        ("Pure", format_bool(pure)),
    ]
    classification = {"szego": szego, "brehmer": brehmer.ok, "pure": pure}
    if not brehmer:
        classification["brehmer_witness"] = str(brehmer.witness)

    if t.n >= 3:
        p, q = resolve_pq(config, t)
        membership = class_bnpq(t, p, q, tolerances.clamp)
        hint = "" if membership else f" (hat {membership.failing_hat} fails on G={membership.witness})"
        rows.append((f"Class ({p},{q})", format_bool(membership.ok) + hint))
        classification[f"class_{p}_{q}"] = membership.ok

        # The defect identities are stated for (1, n); move p and q there first.
        s, _ = reindex_pq(t, p, q)
        scale = max(1.0, max(validation.norms) ** 2)
        for subset in SubsetMask.all_subsets(t.n - 1):
            if 1 not in subset:
                continue
            first, second = check_defect_identity(s, subset, check_class=False)
            ledger.add(f"defect_identity:n[{subset}]", "D_n + T_1 D_1 T_1* = D_1n", first, tolerances.iso * scale)
            ledger.add(f"defect_identity:1[{subset}]", "D_1 + T_n D_n T_n* = D_1n", second, tolerances.iso * scale)

    if pure and brehmer:
        window = min(config.window, config.degree - 1)
        dilation = brehmer_dilation(t, config.degree, window, tolerances)
        ledger.add(
            "brehmer_dilation:isometry",
            "Pi* Pi = I up to the truncation tail",
            dilation.isometry_defect,
            max(tolerances.iso, 3 * truncation_tail_bound(t, config.degree)),
        )
        ledger.add(
            "brehmer_dilation:identity",
            "Pi* M_z^k Pi = T^k",
            dilation.max_residual,
            max(config.tol, 3 * truncation_tail_bound(t, config.degree - window)),
            context=format_index(dilation.worst_index),
        )
        rows.append(("Direct dilation", f"worst {dilation.max_residual:.3e} at k={format_index(dilation.worst_index)}"))

    return report(console, config, "classify", ledger, rows, classification=classification)


def cmd_dilate(config: Config, console: Console) -> int:
    t, source = load_input(config)
    if t.n < 3:
        raise IndexOutOfRange("The dilation pipeline needs n >= 3", n=t.n)

    tolerances = config.tolerances()
    p, q = resolve_pq(config, t)
    s, order = reindex_pq(t, p, q)
    if order != list(range(1, t.n + 1)):
        logger.info(f"Operators reordered as {order} so that T_{p} is first and T_{q} is last")

    model = assemble_predil(s, config.degree, tolerances, config.tol, config.jobs, config.seed)
    final = assemble_theorem(
        s,
        config.degree,
        config.window,
        config.margin,
        tolerances,
        config.tol,
        config.jobs,
        config.strict,
        model=model,
    )

    ledger = ResidualLedger()
    ledger.extend(model.ledger)
    ledger.extend(final.ledger)

    if config.dump_matrices:
        matrices = {f"T{j}": s[j] for j in range(1, s.n + 1)}
        matrices |= {"Pi": model.pi, "V0": model.V0, "embed": final.embed, "W0": final.W0}
        matrices |= {f"V{j}": model.op(j) for j in range(1, s.n + 1)}
        matrices |= {f"W{j}": w for j, w in enumerate(final.W, start=1)}
        dump_bundle(matrices, config.dump_matrices)

    worst_k, worst_residual = final.worst
    rows = [
        ("Input", source),
        ("Operators", f"n={t.n}, dim={t.dim}, order={order}"),
        ("Degree / window", f"N={config.degree}, M={config.window}, margin={config.margin}"),
        ("Co-extension", f"dim={model.dim} over {len(model.blocks)} block(s)"),
        ("Window factor", f"rank={final.dilation.rank}, cond={final.dilation.condition:.2e}"),
        ("Worst P W^k P - T^k", f"{worst_residual:.3e} at k={format_index(worst_k)}"),
    ]

    return report(console, config, "dilate", ledger, rows, order=order)


def cmd_vn(config: Config, console: Console) -> int:
    t, source = load_input(config)

    samples = sample_polynomials(t.n, config.poly_degree, config.samples, config.seed, min(config.grid, 16))
    ledger = von_neumann_check(t, samples, config.grid, config.slack)
    margins = [entry.tol - entry.residual for entry in ledger.entries]

    rows = [
        ("Input", source),
        ("Polynomials", f"{config.samples} of degree {config.poly_degree} per variable"),
        ("Grid / slack", f"{config.grid}^{t.n} points, slack {config.slack:.1e} plus grid correction"),
        ("Smallest margin", f"{min(margins, default=0.0):.3e}"),
    ]

    return report(console, config, "vn", ledger, rows, grid=config.grid, slack=config.slack, margins=margins)


def cmd_generate(config: Config, console: Console) -> int:
    spec = config.gen_spec()
    paths = emit_corpus(spec, config.count, config.input)
    rows = [
        ("Recipe", f"{spec.recipe} n={spec.n} d={spec.d} radius_cap={spec.radius_cap}"),
        ("Written", f"{len(paths)} file(s) in {config.input}"),
    ]

    if config.budget > 0:
        result = gen_separating_search(spec, config.budget)
        if result.found:
            path = os.path.join(config.input, f"separating_{result.seed}.json")
            dump_tuple(result.t, path)
            rows.append(("Separating tuple", f"seed {result.seed}, Brehmer fails on G={result.witness}: {path}"))
        else:
            rows.append(("Separating tuple", f"none within {result.attempts} draws"))

    console.print(key_value_table(rows, title="dilatin generate"))

    return ExitCode.ok


COMMANDS = {
    "classify": cmd_classify,
    "dilate": cmd_dilate,
    "vn": cmd_vn,
    "generate": cmd_generate,
}


def setup_logger(config: Config):
    logger.remove()

    logger.level("DEBUG", color="<magenta>")
    logger.level("INFO", color="<blue>")
    logger.level("WARNING", color="<yellow>")
    logger.level("ERROR", color="<red>")
    log_format = "<dim>{time:MM-DD-YYYY HH:mm:ss}</dim> <b><level>[{level}]</level></b> {message}"

    log_level = config.log_level.upper()

    # Add terminal & file logging
    logger.add(sys.stderr, format=log_format, backtrace=True, colorize=True, level=log_level)
    if config.log_file:
        logger.add(config.log_file, format=log_format, backtrace=True, level=log_level)


def main(argv: list[str] = None):
    arg_parser = ArgumentParser(__version__, argv)
    config = arg_parser.config

    setup_logger(config)

    try:
        code = COMMANDS[config.command](config, arg_parser.console)
    except ManualException as e:
        arg_parser.console.print(e.output())
        sys.exit(e.code)

    sys.exit(code)


if __name__ == "__main__":
    main()
