import json

import numpy as np

from wassmob.grid import Density, Grid
from wassmob.io import read_density_csv, write_density_csv, write_json, write_long_csv


def test_density_csv_round_trip(tmp_path):
    g = Grid.box([(0, 1), (0, 2)], (4, 3))
    r = Density.from_function(g, lambda x, y: 1 + x * y)
    write_density_csv(r, tmp_path / "r.csv")
    back = read_density_csv(tmp_path / "r.csv", g)
    assert back.l1_distance(r) < 1e-15


def test_json_is_strict(tmp_path):
    write_json({"a": np.float64(np.nan), "b": np.arange(3), "c": [1.5, np.inf]}, tmp_path / "x.json")
    data = json.loads((tmp_path / "x.json").read_text())
    assert data == {"a": None, "b": [0, 1, 2], "c": [1.5, None]}


def test_long_csv(tmp_path):
    write_long_csv({"s": ([0, 1], [2.0, 3.0])}, tmp_path / "p.csv")
    assert (tmp_path / "p.csv").read_text().splitlines() == ["series,x,y", "s,0.0,2.0", "s,1.0,3.0"]
