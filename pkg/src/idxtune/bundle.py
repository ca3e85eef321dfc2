"""Model files on disk: one directory holding filter, QPR and cost-model JSON."""

from __future__ import annotations

import dataclasses
from importlib import resources
from pathlib import Path

from .errors import InputError, ModelFormatError
from .io import read_json
from .ml.costmodel import TemplateCostModel
from .ml.filter import FilterModel
from .ml.qpr import QprModel
from .ml.serialize import write_json
from .planner import ModelBundle

FILTER_FILE = "filter.json"
QPR_FILE = "qpr.json"
COST_FILE = "cost_models.json"


def _load(path: Path, loader):
    try:
        return loader(read_json(path))
    except ModelFormatError as exc:
        raise InputError(f"bad model file: {exc}", str(path)) from None


def load_bundle(directory: str | Path | None = None) -> ModelBundle:
    """Models from ``directory``; missing files fall back to the packaged defaults.

    Cost models are workload specific and have no packaged default.
    """
    bundle = ModelBundle()
    base = Path(directory) if directory is not None else None
    if base is not None and not base.is_dir():
        raise InputError("models path is not a directory", str(base))
    packaged = resources.files("idxtune").joinpath("pretrained")
    for name, attr, loader in ((FILTER_FILE, "filter", FilterModel.from_dict),
                               (QPR_FILE, "qpr", QprModel.from_dict)):
        if base is not None and (base / name).exists():
            setattr(bundle, attr, _load(base / name, loader))
        elif packaged.joinpath(name).is_file():
            with resources.as_file(packaged.joinpath(name)) as p:
                setattr(bundle, attr, _load(Path(p), loader))
    if base is not None and (base / COST_FILE).exists():
        doc = read_json(base / COST_FILE)
        try:
            models = {m["payload"]["template_id"]: TemplateCostModel.from_dict(m)
                      for m in doc["models"]}
        except (KeyError, TypeError, ModelFormatError) as exc:
            raise InputError(f"bad cost-model file: {exc}", str(base / COST_FILE)) from None
        # memo entries belong to the training workload's query ids
        bundle.cost_models = {tid: dataclasses.replace(m, memo={})
                              for tid, m in models.items() if not m.degenerate}
    return bundle


def save_bundle(directory: str | Path, filter_model: FilterModel | None = None,
                qpr_model: QprModel | None = None,
                cost_models: dict[str, TemplateCostModel] | None = None) -> list[Path]:
    base = Path(directory)
    base.mkdir(parents=True, exist_ok=True)
    written = []
    if filter_model is not None:
        write_json(base / FILTER_FILE, filter_model.to_dict())
        written.append(base / FILTER_FILE)
    if qpr_model is not None:
        write_json(base / QPR_FILE, qpr_model.to_dict())
        written.append(base / QPR_FILE)
    if cost_models is not None:
        write_json(base / COST_FILE, {"models": [cost_models[t].to_dict()
                                                 for t in sorted(cost_models)]})
        written.append(base / COST_FILE)
    return written
