import argparse
import logging

from sorsnn.config import load_config


def base_parser(description: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--seeds", default="0,1,2,3,4", help="comma-separated seeds")
    return p


def seeds(text: str) -> list[int]:
    return [int(s) for s in text.split(",") if s.strip()]


def config(args, *extra):
    logging.basicConfig(level=logging.WARNING)
    return load_config(args.config, list(args.overrides) + list(extra))
