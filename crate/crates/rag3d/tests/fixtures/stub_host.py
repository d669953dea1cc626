#!/usr/bin/env python3
"""Stand-in for the modeling host used by the test suite.

Accepts the host's headless invocation, runs the script against a tiny fake
``bpy`` that records primitive bounds, then frames and "renders" the scene
the way the real runner does: a solid PNG of the requested size plus a JSON
manifest written last.

STUB_HOST_SKIP_RENDER=1 exits cleanly without writing the image.
"""

import argparse
import json
import math
import os
import struct
import sys
import traceback
import types
import zlib

DEFAULT_FOV = 39.6
EMPTY_SCENE_DISTANCE = 10.0

boxes = []


def _box(center, half):
    lo = [c - h for c, h in zip(center, half)]
    hi = [c + h for c, h in zip(center, half)]
    boxes.append((lo, hi))


def primitive_cube_add(size=2.0, location=(0.0, 0.0, 0.0), scale=(1.0, 1.0, 1.0), **_):
    _box(location, [size / 2.0 * s for s in scale])


def primitive_uv_sphere_add(radius=1.0, location=(0.0, 0.0, 0.0), **_):
    _box(location, [radius] * 3)


def primitive_cylinder_add(radius=1.0, depth=2.0, location=(0.0, 0.0, 0.0), **_):
    _box(location, [radius, radius, depth / 2.0])


def fake_bpy():
    bpy = types.ModuleType("bpy")
    bpy.ops = types.SimpleNamespace(
        mesh=types.SimpleNamespace(
            primitive_cube_add=primitive_cube_add,
            primitive_uv_sphere_add=primitive_uv_sphere_add,
            primitive_cylinder_add=primitive_cylinder_add,
        )
    )
    bpy.app = types.SimpleNamespace(version_string="stub-1.0")
    return bpy


def write_png(path, width, height):
    row = b"\x00" + b"\x80\x80\x80" * width
    raw = row * height

    def chunk(kind, data):
        body = kind + data
        return struct.pack(">I", len(data)) + body + struct.pack(">I", zlib.crc32(body) & 0xFFFFFFFF)

    png = b"\x89PNG\r\n\x1a\n"
    png += chunk(b"IHDR", struct.pack(">IIBBBBB", width, height, 8, 2, 0, 0, 0))
    png += chunk(b"IDAT", zlib.compress(raw))
    png += chunk(b"IEND", b"")
    with open(path, "wb") as f:
        f.write(png)


def frame(args):
    fov = args.fov if args.fov is not None else DEFAULT_FOV
    if not boxes:
        return dict(target=[0.0, 0.0, 0.0], distance=EMPTY_SCENE_DISTANCE, bounding_radius=None,
                    empty_scene=True, fov=fov)
    lo = [min(b[0][i] for b in boxes) for i in range(3)]
    hi = [max(b[1][i] for b in boxes) for i in range(3)]
    center = [(a + b) / 2.0 for a, b in zip(lo, hi)]
    radius = math.sqrt(sum(((b - a) / 2.0) ** 2 for a, b in zip(lo, hi)))
    distance = args.margin * radius / math.sin(math.radians(fov) / 2.0)
    return dict(target=center, distance=distance, bounding_radius=radius, empty_scene=False, fov=fov)


def main():
    argv = sys.argv[sys.argv.index("--") + 1:] if "--" in sys.argv else []
    p = argparse.ArgumentParser()
    p.add_argument("--script", required=True)
    p.add_argument("--render")
    p.add_argument("--manifest")
    p.add_argument("--width", type=int, default=800)
    p.add_argument("--height", type=int, default=800)
    p.add_argument("--azimuth", type=float, default=45.0)
    p.add_argument("--elevation", type=float, default=30.0)
    p.add_argument("--margin", type=float, default=1.1)
    p.add_argument("--fov", type=float)
    args = p.parse_args(argv)

    sys.modules["bpy"] = fake_bpy()
    with open(args.script) as f:
        source = f.read()
    try:
        exec(compile(source, args.script, "exec"), {"__name__": "__main__"})
    except BaseException:
        traceback.print_exc()
        sys.exit(1)
    print("script finished")

    if args.render:
        pose = frame(args)
        if os.environ.get("STUB_HOST_SKIP_RENDER") != "1":
            write_png(args.render, args.width, args.height)
        manifest = dict(azimuth=args.azimuth, elevation=args.elevation, margin=args.margin,
                        host_version="stub-1.0", width=args.width, height=args.height,
                        lighting="three-point-uniform", **pose)
        with open(args.manifest, "w") as f:
            json.dump(manifest, f)


if __name__ == "__main__":
    main()
