"""Request and response bodies for the run service.

The config travels as text plus a format tag rather than parsed JSON so that
the server is the single place where validation happens and TOML input takes
the same path as JSON. File contents are returned verbatim; the client
writes the bytes untouched, which keeps runs byte-deterministic end to end.
"""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict


class RunRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config_text: str
    format: Literal["json", "toml"] = "json"
    experiment: Optional[str] = None
    seed: Optional[int] = None
    assert_checks: bool = False


class FileArtifact(BaseModel):
    name: str
    content: str


class RunResponse(BaseModel):
    exit_code: int
    experiment: str
    report: dict
    files: list[FileArtifact]


class HealthResponse(BaseModel):
    status: str
    version: str
