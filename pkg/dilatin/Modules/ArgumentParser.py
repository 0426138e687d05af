import argparse
import os
import sys
from configparser import RawConfigParser
from dataclasses import dataclass, field, fields

from rich import box
from rich.console import Console
from rich.table import Table
from rich.theme import Theme

from dilatin.DataTypes import ExitCode, GenSpec, Recipe, Tolerances


@dataclass
class Config:
    app_version: str
    command: str = None
    input: str = None
    degree: int = 12
    window: int = 4
    margin: int = 1
    tol: float = 1e-6
    p: int = None
    q: int = None
    seed: int = 0
    out: str = None
    jobs: int = 1
    strict: bool = False
    # Numeric tolerances
    eig: float = 1e-12
    rank: float = 1e-10
    clamp: float = 1e-10
    iso: float = 1e-8
    gram_clamp: float = 1e-9
    log_level: str = "INFO"
    log_file: str = None
    # Generator options, used when input is "gen"
    recipe: str = Recipe.poly_of_one
    n: int = 3
    dim: int = 3
    radius_cap: float = 0.5
    count: int = 1
    budget: int = 0
    # von Neumann options
    samples: int = 50
    poly_degree: int = 3
    grid: int = 64
    slack: float = 1e-6
    dump_matrices: str = None
    config_file: list[str] = field(
        default_factory=lambda: [
            "/etc/dilatin.cnf",
            f"{os.path.expanduser('~')}/.dilatin.cnf",
        ]
    )

    def tolerances(self) -> Tolerances:
        return Tolerances(eig=self.eig, rank=self.rank, clamp=self.clamp, iso=self.iso, gram_clamp=self.gram_clamp)

    def gen_spec(self) -> GenSpec:
        return GenSpec(seed=self.seed, n=self.n, d=self.dim, recipe=self.recipe, radius_cap=self.radius_cap)

    def to_dict(self) -> dict:
        excluded = ("app_version", "config_file")
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name not in excluded}


class ArgumentParser:
    def __init__(self, app_version: str, argv: list[str] = None):
        self.config_object_options = {}

        excluded_options = ["app_version", "command", "input"]
        for variable in fields(Config):
            if variable.name not in excluded_options:
                self.config_object_options[variable.name] = variable.type

        self.formatted_options = "\n\t".join(
            [
                f"({data_type.__name__}) {option}"
                for option, data_type in self.config_object_options.items()
                if option != "config_file"
            ]
        )

        epilog = f"""
Order of precedence for methods that pass options to Dilatin:
\t1. Command-line
\t2. Environment variables (DILATIN_<OPTION>, e.g. DILATIN_DEGREE)
\t3. Dilatin's config (set by --config-file)

The input is a tuple JSON file or "gen" to draw one from the generator
(--recipe, --n, --dim, --radius-cap, --seed).

Exit codes: 0 all checks pass, 1 a verification check fails, 2 construction or parse error.

Dilatin's config supports these options under [dilatin] section:
\t{self.formatted_options}
"""
        self.parser = argparse.ArgumentParser(
            description="Dilatin - isometric dilations of commuting contraction tuples",
            epilog=epilog,
            formatter_class=argparse.RawTextHelpFormatter,
        )
        self.config = Config(app_version)

        self.console = Console(style="#e9e9e9", highlight=False)
        self.console.push_theme(Theme({"red2": "b #fb9a9a"}))

        self._add_options()
        self._parse(argv)

    def _add_common_options(self, parser: argparse.ArgumentParser, input_help: str = 'Tuple JSON file, or "gen"'):
        parser.add_argument("input", metavar="input", type=str, help=input_help)
        parser.add_argument(
            "-c",
            "--config-file",
            dest="config_file",
            type=str,
            metavar="",
            help=f"Config file [default: {self.config.config_file}]",
        )
        parser.add_argument(
            "-o", "--out", dest="out", type=str, metavar="", help="Write the machine-readable report to this path"
        )
        parser.add_argument(
            "-s", "--seed", dest="seed", type=int, metavar="", help=f"Seed [default: {self.config.seed}]"
        )
        parser.add_argument(
            "-j",
            "--jobs",
            dest="jobs",
            type=int,
            metavar="",
            help=f"Worker threads for blocks and verification [default: {self.config.jobs}]",
        )
        parser.add_argument(
            "--tol", dest="tol", type=float, metavar="", help=f"Verification tolerance [default: {self.config.tol}]"
        )
        parser.add_argument(
            "--eig", dest="eig", type=float, metavar="", help=f"Eigenvalue tolerance [default: {self.config.eig}]"
        )
        parser.add_argument(
            "--rank", dest="rank", type=float, metavar="", help=f"Relative rank threshold [default: {self.config.rank}]"
        )
        parser.add_argument(
            "--clamp",
            dest="clamp",
            type=float,
            metavar="",
            help=f"PSD clamp tolerance [default: {self.config.clamp}]",
        )
        parser.add_argument(
            "--iso", dest="iso", type=float, metavar="", help=f"Isometry tolerance [default: {self.config.iso}]"
        )
        parser.add_argument(
            "--gram-clamp",
            dest="gram_clamp",
            type=float,
            metavar="",
            help=f"Window Gram clamp tolerance [default: {self.config.gram_clamp}]",
        )
        parser.add_argument(
            "--recipe",
            dest="recipe",
            type=str,
            choices=Recipe.all(),
            metavar="",
            help=f"Generator recipe: {', '.join(Recipe.all())} [default: {self.config.recipe}]",
        )
        parser.add_argument("--n", dest="n", type=int, metavar="", help=f"Tuple length [default: {self.config.n}]")
        parser.add_argument(
            "--dim", dest="dim", type=int, metavar="", help=f"Operator dimension [default: {self.config.dim}]"
        )
        parser.add_argument(
            "--radius-cap",
            dest="radius_cap",
            type=float,
            metavar="",
            help=f"Norm cap for generated operators [default: {self.config.radius_cap}]",
        )
        parser.add_argument(
            "--log-level", dest="log_level", type=str, metavar="", help=f"Log level [default: {self.config.log_level}]"
        )
        parser.add_argument("--log-file", dest="log_file", type=str, metavar="", help="Also log to this file")
        parser.add_argument(
            "--debug-options", dest="debug_options", action="store_true", help="Display options and exit"
        )

    def _add_pipeline_options(self, parser: argparse.ArgumentParser):
        parser.add_argument(
            "-N",
            "--degree",
            dest="degree",
            type=int,
            metavar="",
            help=f"Hardy degree N [default: {self.config.degree}]",
        )
        parser.add_argument("--p", dest="p", type=int, metavar="", help="Index p of the class [default: 1]")
        parser.add_argument("--q", dest="q", type=int, metavar="", help="Index q of the class [default: n]")

    def _add_options(self):
        self.parser.add_argument(
            "-V", "--version", action="version", version=self.config.app_version, help="Display version"
        )
        subparsers = self.parser.add_subparsers(dest="command", required=True, metavar="command")

        formatter = self.parser.formatter_class

        classify = subparsers.add_parser(
            "classify", help="Validate a tuple and report its positivity classes", formatter_class=formatter
        )
        self._add_common_options(classify)
        self._add_pipeline_options(classify)

        dilate = subparsers.add_parser(
            "dilate", help="Build and verify an isometric dilation", formatter_class=formatter
        )
        self._add_common_options(dilate)
        self._add_pipeline_options(dilate)
        dilate.add_argument(
            "-M", "--window", dest="window", type=int, metavar="", help=f"Window M [default: {self.config.window}]"
        )
        dilate.add_argument(
            "--margin",
            dest="margin",
            type=int,
            metavar="",
            help=f"Trusted-window margin [default: {self.config.margin}]",
        )
        dilate.add_argument(
            "--dump-matrices", dest="dump_matrices", type=str, metavar="", help="Write a zstd matrix bundle here"
        )
        dilate.add_argument(
            "--strict", dest="strict", action="store_true", default=None, help="Stop at the first failing identity"
        )

        vn = subparsers.add_parser(
            "vn", help="Check the von Neumann inequality on sampled polynomials", formatter_class=formatter
        )
        self._add_common_options(vn)
        vn.add_argument(
            "--samples", dest="samples", type=int, metavar="", help=f"Polynomials [default: {self.config.samples}]"
        )
        vn.add_argument(
            "--poly-degree",
            dest="poly_degree",
            type=int,
            metavar="",
            help=f"Degree per variable [default: {self.config.poly_degree}]",
        )
        vn.add_argument("--grid", dest="grid", type=int, metavar="", help=f"Torus grid [default: {self.config.grid}]")
        vn.add_argument(
            "--slack", dest="slack", type=float, metavar="", help=f"Absolute slack [default: {self.config.slack}]"
        )

        generate = subparsers.add_parser(
            "generate", help="Write generated tuples to a directory", formatter_class=formatter
        )
        self._add_common_options(generate, "Directory to write the tuple JSON files into")
        generate.add_argument(
            "--count", dest="count", type=int, metavar="", help=f"Tuples to write [default: {self.config.count}]"
        )
        generate.add_argument(
            "--separating-budget",
            dest="budget",
            type=int,
            metavar="",
            help="Search this many seeds for a (1,n)-class tuple that is not Brehmer",
        )

    def set_config_value(self, source, option, value):
        setattr(self.config, option, value)
        self.add_to_debug_options(source, option, value)

    def add_to_debug_options(self, source, option, value):
        if self.debug_options:
            self.debug_options_table.add_row(source, option, str(value))

    def _parse(self, argv: list[str] = None):
        options = vars(self.parser.parse_args(argv))

        self.config.command = options["command"]
        self.config.input = options["input"]

        self.debug_options = options.get("debug_options", False)
        if self.debug_options:
            self.debug_options_table = Table(box=box.SIMPLE_HEAVY, header_style="b", style="#333f62")
            self.debug_options_table.add_column("Source")
            self.debug_options_table.add_column("Option", style="#91abec")
            self.debug_options_table.add_column("Value", style="#bbc8e8")

        if options.get("config_file"):
            self.config.config_file = [options["config_file"]]

        # Load from config files
        for config_file in self.config.config_file:
            if os.path.isfile(config_file):
                cfg = RawConfigParser()
                cfg.read(config_file)

                for option, data_type in self.config_object_options.items():
                    if option != "config_file" and cfg.has_option("dilatin", option):
                        value = self.verify_config_value(option, cfg.get("dilatin", option), data_type)
                        self.set_config_value("dilatin config", option, value)

        for option, data_type in self.config_object_options.items():
            env_var = f"DILATIN_{option.upper()}"
            if option != "config_file" and os.environ.get(env_var):
                value = self.verify_config_value(option, os.environ.get(env_var), data_type)
                self.set_config_value("env variable", option, value)

        for option in self.config_object_options:
            if option != "config_file" and options.get(option) is not None:
                self.set_config_value("command-line", option, options[option])

        if self.debug_options:
            self.console.print(self.debug_options_table)
            sys.exit()

        self.validate()

    def validate(self):
        config = self.config

        if config.window < 1:
            self.exit(f"Window must be at least 1 (got {config.window})")
        if config.degree < config.window + 1:
            self.exit(f"Degree N must be at least window M + 1 (N={config.degree}, M={config.window})")
        if not 0 <= config.margin < config.window:
            self.exit(f"Margin must lie in [0, M) (margin={config.margin}, M={config.window})")
        if config.p is not None and config.p < 1:
            self.exit(f"p must be at least 1 (got {config.p})")
        if config.p is not None and config.q is not None and config.p >= config.q:
            self.exit(f"Need p < q (p={config.p}, q={config.q})")
        if config.jobs < 1:
            self.exit(f"Jobs must be at least 1 (got {config.jobs})")
        if config.recipe not in Recipe.all():
            self.exit(f"Unknown recipe {config.recipe}; choose from {', '.join(Recipe.all())}")
        if config.input != "gen" and not os.path.isfile(config.input) and config.command != "generate":
            self.exit(f"Tuple file not found: {config.input}")

    def verify_config_value(self, option, value, data_type):
        if data_type is bool:
            return value.lower() == "true"
        elif data_type in (int, float):
            try:
                return data_type(value)
            except ValueError:
                self.exit(f"Config error: {option} must be {'an integer' if data_type is int else 'a number'}")
        return value

    def exit(self, message):
        self.console.print(f"[indian_red]{message}[/indian_red]")
        sys.exit(ExitCode.construction_error)
