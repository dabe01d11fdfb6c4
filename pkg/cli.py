# cli.py
# Command-line driver for knnkge
# Discovers command plugins, resolves the run configuration, and dispatches

import argparse
import importlib.util
import logging
import sys
from pathlib import Path

from kge.config import add_config_arguments, resolve_config
from kge.errors import KGEError

logger = logging.getLogger("cli")

# ================= PATH SETUP =================

BASE_DIR = Path(__file__).resolve().parent
PLUGINS_DIR = BASE_DIR / "plugins"

# ================= PLUGIN LOADING =================

def load_plugins(plugins_dir=PLUGINS_DIR):
    """Instantiate every *Command class found in plugins/*.py; broken plugins are skipped."""
    loaded = []

    for py in sorted(plugins_dir.glob("*.py")):
        name = py.stem
        if name.startswith("_"):
            continue
        try:
            spec = importlib.util.spec_from_file_location(f"plugins.{name}", py)
            module = importlib.util.module_from_spec(spec)
            spec.loader.exec_module(module)

            candidates = [
                getattr(module, attr_name)
                for attr_name in dir(module)
                if isinstance(getattr(module, attr_name), type) and attr_name.endswith("Command")
            ]

            for cand in candidates:
                try:
                    inst = cand()
                    if callable(getattr(inst, "run", None)) and getattr(inst, "name", None):
                        loaded.append(inst)
                    else:
                        logger.warning("skipping %s", cand)
                except Exception as e:
                    logger.exception("failed to instantiate %s: %s", cand, e)

        except Exception as e:
            logger.exception("failed to load %s: %s", py, e)

    by_name = {}
    for inst in loaded:
        if inst.name in by_name:
            logger.warning("duplicate command %r from %s ignored", inst.name, type(inst).__name__)
            continue
        by_name[inst.name] = inst
    return [by_name[n] for n in sorted(by_name)]

# ================= ARGUMENTS =================

def build_parser(commands):
    parser = argparse.ArgumentParser(
        prog="knnkge",
        description="Knowledge-graph completion with a masked entity encoder and a kNN knowledge store",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging and tracebacks")
    parser.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    for cmd in commands:
        p = sub.add_parser(cmd.name, help=cmd.help, description=cmd.help)
        if hasattr(cmd, "add_arguments"):
            cmd.add_arguments(p)
        add_config_arguments(p)
        p.set_defaults(handler=cmd)
    return parser


def setup_logging(verbose=False, quiet=False):
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format="[%(name)s] %(message)s", force=True)

# ================= ENTRY POINT =================

def main(argv=None):
    commands = load_plugins()
    parser = build_parser(commands)
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2

    setup_logging(args.verbose, args.quiet)
    try:
        config = resolve_config(args)
        args.handler.run(args, config)
    except (KGEError, OSError, ValueError, KeyError) as e:
        if args.verbose:
            logger.exception("command %s failed", args.command)
        message = str(e) if not isinstance(e, OSError) or not e.filename else f"{e.filename}: {e.strerror}"
        print(f"error: {message}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
