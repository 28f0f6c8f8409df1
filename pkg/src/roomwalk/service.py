"""Session-based HTTP service driving live generation for the explorer UI.

JSON over HTTP; frames travel as base64 PNG.  All generation funnels through
one lock so a single model instance serves every session; step requests
queue globally while per-session ordering is preserved by the client's
request/response cycle.  Sessions are evicted after 30 minutes idle, with at
most 32 alive at once.

Endpoints: POST /sessions, POST /sessions/{id}/step, GET /sessions/{id},
DELETE /sessions/{id}, GET /healthz.
"""

from __future__ import annotations

import base64
import io
import threading
import time
import uuid
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import HTMLResponse
from PIL import Image
from pydantic import BaseModel

from . import geometry as geo
from . import worldgen as wg
from .codec import Codec
from .sampler import RolloutConfig, RolloutSession
from .transformer import SceneTransformer

SESSION_IDLE_SECONDS = 30 * 60
MAX_SESSIONS = 32


def frame_to_b64(frame: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(wg.to_uint8(frame)).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode()


def b64_to_frame(data: str) -> np.ndarray:
    img = Image.open(io.BytesIO(base64.b64decode(data))).convert("RGB")
    return np.asarray(img).astype(np.float32) / 255.0


class Delta(BaseModel):
    forward: float = 0.0
    strafe: float = 0.0
    yaw_deg: float = 0.0

    def is_identity(self) -> bool:
        return self.forward == 0.0 and self.strafe == 0.0 and self.yaw_deg == 0.0


class StepBody(BaseModel):
    delta: Delta


class CreateBody(BaseModel):
    scene_seed: int | None = None
    image_b64: str | None = None
    checkpoint: str | None = None
    seed: int = 0
    beam_width: int = 3


@dataclass
class Session:
    id: str
    rollout: RolloutSession
    pose: geo.CameraPose
    pose_log: list = field(default_factory=list)
    beam_scores: list = field(default_factory=list)
    token_grids: list = field(default_factory=list)
    last_frame: np.ndarray | None = None
    seed: int = 0
    checkpoint_hash: str = ""
    last_access: float = field(default_factory=time.monotonic)


class Engine:
    """Model + codec + session registry behind a single generation lock."""

    def __init__(self, model: SceneTransformer, codec: Codec, checkpoint_hash: str = ""):
        self.model = model
        self.codec = codec
        self.checkpoint_hash = checkpoint_hash
        self.sessions: dict[str, Session] = {}
        self._gen_lock = threading.Lock()
        self._map_lock = threading.Lock()

    # -- session bookkeeping --------------------------------------------------

    def _evict_idle(self) -> None:
        now = time.monotonic()
        dead = [
            sid for sid, s in self.sessions.items()
            if now - s.last_access > SESSION_IDLE_SECONDS
        ]
        for sid in dead:
            del self.sessions[sid]

    def get_session(self, sid: str) -> Session:
        with self._map_lock:
            self._evict_idle()
            if sid not in self.sessions:
                raise HTTPException(status_code=404, detail=f"unknown session {sid}")
            s = self.sessions[sid]
            s.last_access = time.monotonic()
            return s

    # -- operations ----------------------------------------------------------------

    def create_session(self, body: CreateBody) -> Session:
        cfgc = self.codec.config
        if body.image_b64 is not None:
            frame = b64_to_frame(body.image_b64)
            if frame.shape[:2] != (cfgc.height, cfgc.width):
                raise HTTPException(
                    status_code=422,
                    detail=(
                        f"image must be {cfgc.height}x{cfgc.width} "
                        f"(dims divisible by {cfgc.factor})"
                    ),
                )
            pose = geo.CameraPose.identity()
        elif body.scene_seed is not None:
            scene = wg.generate_scene(body.scene_seed)
            traj = wg.generate_trajectory(scene, body.scene_seed, 2)
            pose = traj.poses[0]
            k = geo.Intrinsics.from_fov(cfgc.width, cfgc.height)
            frame = wg.render_antialiased(scene, pose, k, cfgc.height, cfgc.width)
        else:
            raise HTTPException(status_code=422, detail="need scene_seed or image_b64")
        k = geo.Intrinsics.from_fov(cfgc.width, cfgc.height)
        roll_cfg = RolloutConfig(total_steps=2, beam_width=body.beam_width, seed=body.seed)
        rollout = RolloutSession(self.model, self.codec, k, roll_cfg)
        rollout.start(frame.astype(np.float32), pose)
        # what the user sees is the codec's view of the input frame
        shown = self.codec.detokenize(rollout.window[0][0].reshape(cfgc.grid_h, cfgc.grid_w))
        session = Session(
            id=uuid.uuid4().hex[:12],
            rollout=rollout,
            pose=pose,
            pose_log=[pose],
            last_frame=shown,
            seed=body.seed,
            checkpoint_hash=self.checkpoint_hash,
        )
        with self._map_lock:
            self._evict_idle()
            if len(self.sessions) >= MAX_SESSIONS:
                raise HTTPException(status_code=409, detail="session limit reached")
            self.sessions[session.id] = session
        return session

    def step(self, sid: str, delta: Delta) -> dict:
        session = self.get_session(sid)
        if delta.is_identity():
            return {
                "frame_png_b64": frame_to_b64(session.last_frame),
                "pose": geo.pose_to_json(session.pose),
                "beam_score": session.beam_scores[-1] if session.beam_scores else None,
                "cached": True,
            }
        with self._gen_lock:
            new_pose = geo.apply_delta(
                session.pose, delta.forward, delta.strafe, delta.yaw_deg
            )
            try:
                result = session.rollout.step_to(new_pose)
            except Exception as e:  # session survives decode failures
                raise HTTPException(status_code=500, detail=f"generation failed: {e}")
            session.pose = new_pose
            session.pose_log.append(new_pose)
            session.beam_scores.append(result.score)
            session.token_grids.append(result.tokens.tolist())
            session.last_frame = result.frame
        return {
            "frame_png_b64": frame_to_b64(result.frame),
            "pose": geo.pose_to_json(new_pose),
            "beam_score": result.score,
            "cached": False,
        }

    def state(self, sid: str) -> dict:
        s = self.get_session(sid)
        return {
            "id": s.id,
            "poses": [geo.pose_to_json(p) for p in s.pose_log],
            "beam_scores": s.beam_scores,
            "token_grids": s.token_grids,
            "generated_frames": len(s.beam_scores),
            "model_calls": s.rollout.model_calls,
            "checkpoint_hash": s.checkpoint_hash,
            "seed": s.seed,
        }

    def delete(self, sid: str) -> None:
        with self._map_lock:
            if sid not in self.sessions:
                raise HTTPException(status_code=404, detail=f"unknown session {sid}")
            del self.sessions[sid]


def create_app(engine: Engine, ui_dir=None) -> FastAPI:
    app = FastAPI(title="roomwalk session service")

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "sessions": len(engine.sessions)}

    @app.post("/sessions")
    def create(body: CreateBody):
        s = engine.create_session(body)
        return {
            "id": s.id,
            "frame_png_b64": frame_to_b64(s.last_frame),
            "pose": geo.pose_to_json(s.pose),
            "height": engine.codec.config.height,
            "width": engine.codec.config.width,
        }

    @app.post("/sessions/{sid}/step")
    def step(sid: str, body: StepBody):
        return engine.step(sid, body.delta)

    @app.get("/sessions/{sid}")
    def state(sid: str):
        return engine.state(sid)

    @app.delete("/sessions/{sid}")
    def delete(sid: str):
        engine.delete(sid)
        return {"deleted": True}

    if ui_dir is not None:
        from pathlib import Path

        index = Path(ui_dir) / "index.html"

        @app.get("/", response_class=HTMLResponse)
        def root():
            return index.read_text()

        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=str(ui_dir)), name="ui")

    return app
