"""Helpers shared by the demo scripts."""
import argparse

from dognose.scenarios import get_preset


def parser(description):
    ap = argparse.ArgumentParser(description=description)
    ap.add_argument("--full", action="store_true",
                    help="use the full 128x128 grid and 300 s runs (about half an hour per run)")
    return ap


def quick(spec, full, duration=60.0):
    """Coarse grid, a nearer source and a short run unless ``full`` is set."""
    if full:
        return spec
    return (spec.replace("domain.cell_size", 0.25 / 64)
                .replace("source.offset", 0.03)
                .replace("duration", duration)
                .replace("motor_off_time", 0.8 * duration))


def preset(name, full, duration=60.0):
    return quick(get_preset(name), full, duration)
