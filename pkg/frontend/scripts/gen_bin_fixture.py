#!/usr/bin/env python3
"""Regenerate the bin-mapping fixture: four corner pixels + center of every
bin at K=24 on a 960x960 raster, labeled by the service-side tiling."""

import json
from pathlib import Path

from lanegraph.extraction import bin_bounds, point_to_bin, RegionBin

K = 24
SIZE = 960

rows = []
for row in range(K):
    for col in range(K):
        x0, y0, x1, y1 = bin_bounds(RegionBin(row, col, K), SIZE, SIZE)
        positions = [
            (x0 + 0.5, y0 + 0.5),
            (x1 - 0.5, y0 + 0.5),
            (x0 + 0.5, y1 - 0.5),
            (x1 - 0.5, y1 - 0.5),
            ((x0 + x1) / 2, (y0 + y1) / 2),
        ]
        for x, y in positions:
            b = point_to_bin((x, y), SIZE, SIZE, K)
            assert (b.row, b.col) == (row, col), (x, y, b)
            rows.append([x, y, row, col])

out = Path(__file__).parent.parent / "tests" / "fixtures" / "bin_mapping_k24.json"
out.write_text(json.dumps({"k": K, "width": SIZE, "height": SIZE, "positions": rows}))
print(f"wrote {len(rows)} positions to {out}")
