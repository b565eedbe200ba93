"""Runs `convmcd targets` + `convmcd eval` on a tiny fixture and validates the report."""
import json
import subprocess
import sys
import tempfile
from pathlib import Path

import jsonschema
import numpy as np
from PIL import Image


def main(cli, schema_path):
    schema = json.loads(Path(schema_path).read_text())
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        gt, pred = tmp / "gt", tmp / "pred"
        gt.mkdir()
        pred.mkdir()
        yy, xx = np.mgrid[:32, :32]
        for i, (cy, cx, r) in enumerate([(16, 16, 8), (10, 20, 5)]):
            disk = ((yy - cy) ** 2 + (xx - cx) ** 2 <= r * r).astype(np.uint8) * 255
            Image.fromarray(disk).save(gt / f"img{i}.png")
            Image.fromarray(np.roll(disk, i + 1, axis=1)).save(pred / f"img{i}.png")
        Image.fromarray(np.zeros((32, 32), np.uint8)).save(gt / "blank.png")
        Image.fromarray(np.zeros((32, 32), np.uint8)).save(pred / "blank.png")
        report = tmp / "report.json"
        subprocess.run([cli, "eval", "--pred", str(pred), "--gt", str(gt), "--report", str(report)], check=True)
        data = json.loads(report.read_text())
        jsonschema.validate(data, schema)
        for row in data["images"]:
            assert abs(row["dice"] - 2 * row["jaccard"] / (1 + row["jaccard"])) <= 1e-12, row
        print(f"report valid: {len(data['images'])} images")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
