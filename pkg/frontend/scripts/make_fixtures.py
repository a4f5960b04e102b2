"""Regenerate the golden fixtures under tests/fixtures.

The stroke documents here exercise the rasterizer edge cases the
TypeScript port must reproduce byte for byte: fractional centers and
radii, polyline joints, strokes clipped at the canvas border, later
strokes overwriting earlier ones, a zero-radius dot, and a dot whose
stamp box rounds to empty coverage.

Run from anywhere:

    python3 frontend/scripts/make_fixtures.py
"""

import pathlib

from curvemrf.core import bank_with_specials
from curvemrf.pnm import encode_pgm
from curvemrf.strokes import Stroke, StrokeDocument, rasterize

FIXTURES = pathlib.Path(__file__).resolve().parent.parent / "tests" / "fixtures"


def documents() -> dict[str, StrokeDocument]:
    dot = StrokeDocument(
        width=12,
        height=10,
        strokes=(
            Stroke(tag="fg", radius=1.0, points=((5.0, 5.0),)),
            Stroke(tag="bg", radius=2.5, points=((2.2, 7.4),)),
        ),
    )
    overwrite = StrokeDocument(
        width=16,
        height=12,
        strokes=(
            Stroke(tag="fg", radius=2.0, points=((3.0, 3.0), (12.0, 3.0))),
            Stroke(tag="bg", radius=1.2, points=((3.0, 3.0), (12.0, 3.0))),
            Stroke(tag="fg", radius=0.75, points=((14.5, 9.5),)),
        ),
    )
    script = StrokeDocument(
        width=20,
        height=14,
        strokes=(
            Stroke(
                tag="fg",
                radius=1.5,
                points=((-2.0, 2.0), (6.5, 3.25), (9.0, 11.0)),
            ),
            Stroke(tag="bg", radius=2.25, points=((12.75, -1.5), (16.5, 12.5))),
            Stroke(tag="fg", radius=3.5, points=((19.0, 0.0),)),
            Stroke(tag="bg", radius=0.0, points=((5.0, 9.0),)),
        ),
    )
    return {"dot": dot, "overwrite": overwrite, "script": script}


def main() -> None:
    FIXTURES.mkdir(parents=True, exist_ok=True)
    for name, doc in documents().items():
        (FIXTURES / f"{name}.json").write_text(doc.to_json() + "\n")
        (FIXTURES / f"{name}.pgm").write_bytes(encode_pgm(rasterize(doc).tags))
        print(f"wrote {name}.json / {name}.pgm")
    bank = bank_with_specials([], side=4, f_max=2.0)
    bank.save(FIXTURES / "bank.json")
    print("wrote bank.json")


if __name__ == "__main__":
    main()
