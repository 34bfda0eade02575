"""Frame document parsing and SVG/HTML exporters."""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ParseError, UsageError
from .pipeline import GroupInfo
from .timing import FrameSet


def atomic_write(path: str | Path, data: str | bytes) -> None:
    """Write through a temp file in the target directory, then rename over the target."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    raw = data.encode() if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(doc) -> str:
    return json.dumps(doc, separators=(",", ":"), sort_keys=False) + "\n"


def frames_from_dict(doc) -> tuple[FrameSet, list[GroupInfo]]:
    if not isinstance(doc, Mapping):
        raise ParseError("frames document must be an object")
    for key in ("radius", "frame_count", "frames"):
        if key not in doc:
            raise ParseError("missing key", field=key)
    frames = doc["frames"]
    if not isinstance(frames, list):
        raise ParseError("expected a list", field="frames")
    if not frames:
        raise UsageError("frames file holds no frames")
    if doc["frame_count"] != len(frames):
        raise ParseError("frame_count does not match the frame list", field="frame_count")
    first = frames[0].get("objects") if isinstance(frames[0], Mapping) else None
    if not isinstance(first, Mapping):
        raise ParseError("missing objects", field="frames[0].objects")
    ids = list(first)
    pos = np.zeros((len(frames), len(ids), 2))
    times = np.zeros(len(frames))
    for k, fr in enumerate(frames):
        where = f"frames[{k}]"
        if not isinstance(fr, Mapping) or "t" not in fr or not isinstance(fr.get("objects"), Mapping):
            raise ParseError("expected {t, objects}", field=where)
        if list(fr["objects"]) != ids:
            raise ParseError("object ids differ from frame 0", field=f"{where}.objects")
        try:
            times[k] = float(fr["t"])
            pos[k] = np.asarray([fr["objects"][o] for o in ids], dtype=np.float64).reshape(len(ids), 2)
        except (TypeError, ValueError):
            raise ParseError("positions must be [x, y]", field=f"{where}.objects") from None
    groups = []
    for i, gd in enumerate(doc.get("groups", [])):
        try:
            groups.append(
                GroupInfo(
                    tuple(gd["members"]),
                    tuple(gd.get("hotspots", ())),
                    tuple(float(t) for t in gd.get("hotspot_times", ())),
                )
            )
        except (KeyError, TypeError, ValueError):
            raise ParseError("bad group entry", field=f"groups[{i}]") from None
    fs = FrameSet(ids, times, pos, float(doc["radius"]), [list(g.members) for g in groups])
    return fs, groups


# ---------------------------------------------------------------- svg

_PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def _colors(frames: FrameSet) -> dict[str, str]:
    colors = {}
    for gi, members in enumerate(frames.groups):
        for oid in members:
            colors[oid] = _PALETTE[gi % len(_PALETTE)]
    return {oid: colors.get(oid, "#444444") for oid in frames.ids}


def frame_svg(frames: FrameSet, k: int, colors: dict[str, str] | None = None) -> str:
    colors = colors or _colors(frames)
    r = frames.radius if frames.radius > 0 else 0.005
    parts = [
        '<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 1 1" width="800" height="800">',
        '<rect x="0" y="0" width="1" height="1" fill="#ffffff"/>',
    ]
    for i, oid in enumerate(frames.ids):
        x, y = frames.positions[k, i]
        parts.append(
            f'<circle id="{oid}" cx="{x:.6f}" cy="{1.0 - y:.6f}" r="{r:.6f}" fill="{colors[oid]}" fill-opacity="0.8"/>'
        )
    parts.append("</svg>\n")
    return "\n".join(parts)


def export_svg(frames: FrameSet, out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    colors = _colors(frames)
    written = []
    for k in range(frames.frame_count):
        p = out_dir / f"frame_{k:04d}.svg"
        atomic_write(p, frame_svg(frames, k, colors))
        written.append(p)
    return written


# ---------------------------------------------------------------- html

_PLAYER = """<!DOCTYPE html>
<html>
<head>
<meta charset="utf-8">
<title>animation</title>
<style>body{margin:0;font-family:sans-serif;background:#fafafa}svg{display:block;margin:8px auto;background:#fff;border:1px solid #ccc}
#bar{text-align:center}</style>
</head>
<body>
<svg id="view" viewBox="0 0 1 1" width="720" height="720"></svg>
<div id="bar"><button id="play">pause</button> <input id="seek" type="range" min="0" value="0"> <span id="label"></span></div>
<script id="data" type="application/json">__DATA__</script>
<script>
const doc = JSON.parse(document.getElementById("data").textContent);
const view = document.getElementById("view"), seek = document.getElementById("seek");
const label = document.getElementById("label"), btn = document.getElementById("play");
const ns = "http://www.w3.org/2000/svg";
const colors = doc.colors, ids = Object.keys(doc.frames[0].objects), dots = {};
for (const id of ids) {
  const c = document.createElementNS(ns, "circle");
  c.setAttribute("r", doc.radius > 0 ? doc.radius : 0.005);
  c.setAttribute("fill", colors[id] || "#444");
  c.setAttribute("fill-opacity", "0.8");
  view.appendChild(c);
  dots[id] = c;
}
seek.max = doc.frames.length - 1;
let k = 0, playing = true;
function draw() {
  const f = doc.frames[k];
  for (const id of ids) {
    const p = f.objects[id];
    dots[id].setAttribute("cx", p[0]);
    dots[id].setAttribute("cy", 1 - p[1]);
  }
  seek.value = k;
  label.textContent = "t = " + f.t.toFixed(3);
}
btn.onclick = () => { playing = !playing; btn.textContent = playing ? "pause" : "play"; };
seek.oninput = () => { k = +seek.value; draw(); };
setInterval(() => { if (playing) { k = (k + 1) % doc.frames.length; draw(); } }, 1000 / 30);
draw();
</script>
</body>
</html>
"""


def export_html(frames: FrameSet, doc: Mapping, out_path: str | Path) -> Path:
    payload = dict(doc)
    payload["colors"] = _colors(frames)
    data = json.dumps(payload, separators=(",", ":")).replace("</", "<\\/")
    out_path = Path(out_path)
    atomic_write(out_path, _PLAYER.replace("__DATA__", data))
    return out_path
