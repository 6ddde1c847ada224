"""Write the ten-molecule toy corpus as ingestable inputs: one XYZ per molecule
plus a JSON-lines spectrum file carrying mode lists and reference graphs.

    python3 demos/make_toy_inputs.py [toy10|toy200] [out_dir]
"""
import json
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]


def main(name: str = "toy10", out: str | None = None) -> Path:
    out_dir = Path(out or ROOT / "demos" / "out" / name)
    xyz_dir = out_dir / "xyz"
    xyz_dir.mkdir(parents=True, exist_ok=True)
    with open(ROOT / "tests" / "data" / f"{name}.jsonl") as src, open(out_dir / "spectra.jsonl", "w") as dst:
        for line in src:
            rec = json.loads(line)
            (xyz_dir / f"{rec['id']}.xyz").write_text(rec["xyz"])
            dst.write(json.dumps({"id": rec["id"], "modes": rec["modes"], "graph": rec["graph"]}) + "\n")
    print(f"wrote {out_dir}/xyz and {out_dir}/spectra.jsonl")
    return out_dir


if __name__ == "__main__":
    main(*sys.argv[1:3])
