"""Interactive editing sessions: segmentation correction, apply, undo/redo.

A session records one editing episode: the input image, the current
(possibly user-corrected) segmentation map, and a cursor-based history of
edit steps. Every apply runs the full pipeline on the *original* input with
the current segmentation, so a bad result can be corrected and redone any
number of times without accumulating artifacts. Undo is non-destructive;
applying after an undo truncates the redo tail, like a conventional editor.

Sessions persist as one directory each (PNGs plus a JSON manifest replaced
atomically), so a service restart loses nothing.
"""

from __future__ import annotations

import json
import os
import threading
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .engine import EditOutcome, Engine
from .errors import (
    EmptyRegionError,
    PaletteError,
    SegEditError,
    SessionNotFoundError,
    ShapeError,
)
from .imagecore import (
    ImageBuffer,
    SegMap,
    load_image,
    load_segmap,
    save_image,
    save_segmap,
)

__all__ = ["EditStep", "EditSession", "SessionManager"]


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


@dataclass(frozen=True)
class EditStep:
    """One applied edit: what was asked, the maps used/produced, the result."""

    instruction_raw: str
    action: str
    target_label: str
    seg_used: SegMap
    seg_out: SegMap
    output: ImageBuffer
    background_ref: str | None = None
    report: dict = field(default_factory=dict)


@dataclass
class EditSession:
    id: str
    input: ImageBuffer
    seg_current: SegMap
    target_label: str | None
    steps: list[EditStep]
    cursor: int
    created_at: str
    updated_at: str
    state: str = "ready"  # ready | needs-segmentation
    warning: str | None = None

    def visible_output(self) -> ImageBuffer:
        if self.cursor == 0:
            return self.input
        return self.steps[self.cursor - 1].output

    def check_invariants(self) -> None:
        assert 0 <= self.cursor <= len(self.steps)

    def to_state_view(self) -> dict:
        return {
            "id": self.id,
            "created_at": self.created_at,
            "updated_at": self.updated_at,
            "state": self.state,
            "target": self.target_label,
            "cursor": self.cursor,
            "warning": self.warning,
            "width": self.input.width,
            "height": self.input.height,
            "steps": [
                {
                    "index": k,
                    "instruction": step.instruction_raw,
                    "action": step.action,
                    "target": step.target_label,
                    "output_url": f"/sessions/{self.id}/steps/{k}/output",
                    "seg_out_url": f"/sessions/{self.id}/steps/{k}/seg_out",
                }
                for k, step in enumerate(self.steps)
            ],
        }


class SessionManager:
    """Owns all sessions; per-session commands serialize through a lock."""

    def __init__(self, engine: Engine, root: str | Path):
        self.engine = engine
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._sessions: dict[str, EditSession] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._registry_lock = threading.Lock()

    # -- lifecycle ---------------------------------------------------------

    def create(self, image: ImageBuffer, instruction_text: str) -> EditSession:
        session_id = uuid.uuid4().hex[:12]
        target_label: str | None = None
        state = "ready"
        warning = None
        try:
            seg = self.engine.segment(image)
            detections = self.engine.det_backend.detect(image)
            parsed = self.engine.parse_for_scene(instruction_text, detections)
            target = self.engine._select_target(parsed, detections, None)
            target_label = target.label
        except SegEditError as err:
            # let the user paint a mask from scratch instead of failing
            seg = SegMap.zeros(image.height, image.width, {1: "object"})
            state = "needs-segmentation"
            warning = str(err)
        now = _now()
        session = EditSession(
            id=session_id,
            input=image,
            seg_current=seg,
            target_label=target_label,
            steps=[],
            cursor=0,
            created_at=now,
            updated_at=now,
            state=state,
            warning=warning,
        )
        with self._registry_lock:
            self._sessions[session_id] = session
            self._locks[session_id] = threading.Lock()
        self._persist(session)
        return session

    def get(self, session_id: str) -> EditSession:
        with self._registry_lock:
            if session_id in self._sessions:
                return self._sessions[session_id]
        session = self._load(session_id)
        with self._registry_lock:
            self._sessions.setdefault(session_id, session)
            self._locks.setdefault(session_id, threading.Lock())
        return session

    def ids(self) -> list[str]:
        on_disk = {p.name for p in self.root.iterdir() if (p / "manifest.json").exists()}
        with self._registry_lock:
            return sorted(on_disk | set(self._sessions))

    def _lock(self, session_id: str) -> threading.Lock:
        with self._registry_lock:
            lock = self._locks.get(session_id)
        if lock is None:
            self.get(session_id)
            with self._registry_lock:
                lock = self._locks[session_id]
        return lock

    # -- commands ------------------------------------------------------------

    def update_segmap(self, session_id: str, seg: SegMap) -> EditSession:
        with self._lock(session_id):
            session = self.get(session_id)
            if (seg.height, seg.width) != (session.input.height, session.input.width):
                raise ShapeError("segmentation map does not match the input dimensions")
            known = set(session.seg_current.palette) | set(seg.palette)
            unknown = set(seg.present_ids()) - known
            if unknown:
                raise PaletteError(f"unknown class ids {sorted(unknown)}")
            palette = dict(session.seg_current.palette)
            palette.update(seg.palette)
            session.seg_current = SegMap(seg.data, palette)
            if session.state == "needs-segmentation" and session.seg_current.present_ids():
                session.state = "ready"
            session.updated_at = _now()
            session.warning = None
            self._persist(session)
            return session

    def apply_instruction(
        self,
        session_id: str,
        instruction_text: str,
        background: ImageBuffer | None = None,
    ) -> EditStep:
        with self._lock(session_id):
            session = self.get(session_id)
            seg_used = session.seg_current
            if not seg_used.present_ids():
                raise EmptyRegionError(
                    "session has an empty segmentation map; paint or upload one first"
                )
            default_target = session.target_label
            if default_target is None and len(seg_used.present_ids()) == 1:
                only = seg_used.present_ids()[0]
                default_target = seg_used.palette.get(only)
            outcome: EditOutcome = self.engine.run_edit(
                session.input,
                instruction_text,
                background=background,
                seg_override=seg_used,
                default_target=default_target,
                seed=len(session.steps),
            )
            background_ref = None
            if background is not None:
                background_ref = f"assets/background_{len(session.steps)}.png"
                path = self._dir(session.id) / background_ref
                path.parent.mkdir(parents=True, exist_ok=True)
                save_image(background, path)
            step = EditStep(
                instruction_raw=instruction_text,
                action=outcome.action.kind.value,
                target_label=outcome.target.label,
                seg_used=seg_used,
                seg_out=outcome.seg_out,
                output=outcome.output,
                background_ref=background_ref,
                report=outcome.report,
            )
            if session.cursor < len(session.steps):
                del session.steps[session.cursor :]  # discard the redo branch
                self._drop_persisted_steps(session.id, session.cursor)
            session.steps.append(step)
            session.cursor = len(session.steps)
            session.target_label = outcome.target.label
            session.updated_at = _now()
            session.warning = None
            session.check_invariants()
            self._persist(session)
            return step

    def undo(self, session_id: str) -> EditSession:
        return self._move_cursor(session_id, -1)

    def redo(self, session_id: str) -> EditSession:
        return self._move_cursor(session_id, +1)

    def _move_cursor(self, session_id: str, delta: int) -> EditSession:
        with self._lock(session_id):
            session = self.get(session_id)
            new_cursor = session.cursor + delta
            if 0 <= new_cursor <= len(session.steps):
                session.cursor = new_cursor
                session.warning = None
            else:
                session.warning = "undo" if delta < 0 else "redo"
                session.warning += " out of range; state unchanged"
            session.updated_at = _now()
            session.check_invariants()
            self._persist(session)
            return session

    def get_state(self, session_id: str) -> dict:
        return self.get(session_id).to_state_view()

    # -- persistence -----------------------------------------------------------

    def _dir(self, session_id: str) -> Path:
        return self.root / session_id

    def _drop_persisted_steps(self, session_id: str, from_index: int) -> None:
        """Remove persisted step directories from a truncated redo branch."""
        steps_dir = self._dir(session_id) / "steps"
        if not steps_dir.exists():
            return
        for child in sorted(steps_dir.iterdir()):
            if child.is_dir() and child.name.isdigit() and int(child.name) >= from_index:
                for item in sorted(child.rglob("*"), reverse=True):
                    item.unlink()
                child.rmdir()

    def _persist(self, session: EditSession) -> None:
        base = self._dir(session.id)
        base.mkdir(parents=True, exist_ok=True)
        save_image(session.input, base / "input.png")
        save_segmap(session.seg_current, base / "seg_current.png")
        for k, step in enumerate(session.steps):
            step_dir = base / "steps" / f"{k:03d}"
            if (step_dir / "output.png").exists():
                continue  # steps are immutable once written
            step_dir.mkdir(parents=True, exist_ok=True)
            save_image(step.output, step_dir / "output.png")
            save_segmap(step.seg_used, step_dir / "seg_used.png")
            save_segmap(step.seg_out, step_dir / "seg_out.png")
            (step_dir / "step.json").write_text(
                json.dumps(
                    {
                        "instruction": step.instruction_raw,
                        "action": step.action,
                        "target": step.target_label,
                        "background_ref": step.background_ref,
                        "report": step.report,
                    }
                )
            )
        manifest = {
            "id": session.id,
            "created_at": session.created_at,
            "updated_at": session.updated_at,
            "cursor": session.cursor,
            "target_label": session.target_label,
            "state": session.state,
            "warning": session.warning,
            "step_count": len(session.steps),
        }
        tmp = base / "manifest.json.tmp"
        tmp.write_text(json.dumps(manifest, indent=1))
        os.replace(tmp, base / "manifest.json")

    def _load(self, session_id: str) -> EditSession:
        base = self._dir(session_id)
        manifest_path = base / "manifest.json"
        if not manifest_path.exists():
            raise SessionNotFoundError(f"no session {session_id!r}")
        manifest = json.loads(manifest_path.read_text())
        steps: list[EditStep] = []
        for k in range(int(manifest["step_count"])):
            step_dir = base / "steps" / f"{k:03d}"
            meta = json.loads((step_dir / "step.json").read_text())
            steps.append(
                EditStep(
                    instruction_raw=meta["instruction"],
                    action=meta["action"],
                    target_label=meta["target"],
                    seg_used=load_segmap(step_dir / "seg_used.png"),
                    seg_out=load_segmap(step_dir / "seg_out.png"),
                    output=load_image(step_dir / "output.png"),
                    background_ref=meta.get("background_ref"),
                    report=meta.get("report", {}),
                )
            )
        return EditSession(
            id=manifest["id"],
            input=load_image(base / "input.png"),
            seg_current=load_segmap(base / "seg_current.png"),
            target_label=manifest.get("target_label"),
            steps=steps,
            cursor=int(manifest["cursor"]),
            created_at=manifest["created_at"],
            updated_at=manifest["updated_at"],
            state=manifest.get("state", "ready"),
            warning=manifest.get("warning"),
        )
