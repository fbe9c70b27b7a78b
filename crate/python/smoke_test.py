"""Exercise the compiled extension: python python/smoke_test.py (with artigen importable)."""

import json
import math

import artigen


def box(lo, hi):
    return {
        "type": "points",
        "points": [
            [x, y, z]
            for x in (lo[0], hi[0])
            for y in (lo[1], hi[1])
            for z in (lo[2], hi[2])
        ],
    }


def cabinet():
    return {
        "version": artigen.FORMAT_VERSION,
        "parts": [
            {
                "id": 0,
                "semantic": "base",
                "geometry": box([0, 0, 0], [1, 1, 1]),
                "joint": {"type": "fixed", "parent": -1},
            },
            {
                "id": 1,
                "semantic": "door",
                "geometry": box([0, -0.05, 0], [1, 0, 1]),
                "joint": {
                    "type": "revolute",
                    "parent": 0,
                    "origin": [0, 0, 0],
                    "axis": [0, 0, -1],
                    "range": [0, math.pi / 2],
                },
            },
        ],
    }


def main():
    text = json.dumps(cabinet())
    ok, violations = artigen.validate(text)
    assert ok, violations

    opened = json.loads(artigen.pose(text, fraction=1.0))
    xs = [p[0] for p in opened["parts"][1]["geometry"]["points"]]
    assert max(xs) < 1e-9 and min(xs) > -0.06, xs

    report = json.loads(artigen.evaluate(text, text, points=256, aor_resolution=16))
    for key in ("d_gIoU", "d_cDist", "d_CD"):
        assert report["rs"][key] < 1e-9, report
        assert report["as"][key] < 1e-9, report

    assert abs(artigen.giou_distance([0, 0, 0], [2, 2, 2], [1, 1, 1], [3, 3, 3]) - (1 - (1 / 15 - 12 / 27))) < 1e-12
    assert artigen.center_distance([0, 0, 0], [1, 1, 1], [0, 0, 1], [1, 1, 2]) == 1.0
    assert abs(artigen.chamfer_distance([[0, 0, 0]], [[0, 0, 2]]) - 8.0) < 1e-12

    urdf = artigen.export_urdf(text, "cab")
    assert 'type="revolute"' in urdf

    assert json.loads(artigen.simplify(text))["parts"][1]["joint"]["parent"] == 0
    assert json.loads(artigen.normalize_json(text))["version"] == 1

    bad = cabinet()
    del bad["parts"][1]["joint"]["axis"]
    try:
        artigen.validate(json.dumps(bad))
    except ValueError as e:
        assert "axis" in str(e)
    else:
        raise AssertionError("missing axis accepted")

    print("smoke test ok")


if __name__ == "__main__":
    main()
