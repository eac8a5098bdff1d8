"""Drive the whole pipeline end to end from a config file, offline.

Equivalent to:

    personasim generate --config ... --count 4
    personasim annotate --config ...
    personasim match    --config ... --roster tests/data/e2e_roster.csv
    personasim survey   --config ...
    personasim evaluate --config ...

Uses the repository's scripted-stub test fixture, so no network is touched
and the resulting report is reproducible byte for byte.
"""

import os
import tempfile
from pathlib import Path

from personasim.pipeline import (
    cmd_annotate,
    cmd_evaluate,
    cmd_generate,
    cmd_match,
    cmd_survey,
    load_config,
)

FIXTURES = Path(__file__).resolve().parent.parent / "tests" / "data"

with tempfile.TemporaryDirectory() as tmp:
    os.environ["E2E_STORAGE"] = str(Path(tmp) / "run")
    config = load_config(FIXTURES / "e2e_config.yaml")

    print("generate:", cmd_generate(config, 4))
    print("annotate:", cmd_annotate(config))
    print("match:", cmd_match(config, FIXTURES / "e2e_roster.csv"))
    for study in config.studies:
        stats = cmd_survey(config, study)
        print(f"survey {study}: {stats['cells']} cells")
    complete = cmd_evaluate(config)
    print(f"evaluate complete: {complete}\n")
    print((config.storage_root / "report.txt").read_text())
    print("stage artifacts under", config.storage_root)
    for path in sorted(config.storage_root.iterdir()):
        print(" ", path.name)
