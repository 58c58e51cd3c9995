"""Interactive session server: JSON control messages plus binary frame
payloads over a WebSocket.

Protocol "ams-proto/1": the client sends hello {version, role} on connect;
the server replies hello, then topology, then streams frame header + AMSF
binary payloads while playing. Edits flow client -> server and are acked
after they are applied between frames. Multiple viewers may subscribe; only
one editor is admitted at a time.
"""

import asyncio
import json
import threading
import time
from contextlib import asynccontextmanager

from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from .runtime import EditError, Session

PROTOCOL_VERSION = "ams-proto/1"


class SessionRunner:
    """Owns the simulation thread; paces frames and fans out snapshots."""

    def __init__(self, session: Session, fps: float = 60.0):
        self.session = session
        self.fps = fps
        self._stop = threading.Event()
        self._thread = None
        self._cond = threading.Condition()
        self._acks = []
        self.last_error = None

    def start(self):
        if self._thread is None:
            self._thread = threading.Thread(target=self._loop, daemon=True)
            self._thread.start()

    def stop(self):
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=5.0)
            self._thread = None

    def _loop(self):
        interval = 1.0 / self.fps
        while not self._stop.is_set():
            tick = time.perf_counter()
            try:
                if self.session.playing:
                    self.session.step_frame()
                else:
                    # stay responsive to edits while paused
                    self.session.drain_edits()
            except Exception as exc:  # divergence keeps the server alive
                self.last_error = str(exc)
                self.session.playing = False
            with self._cond:
                self._acks.extend(self.session.drain_acks())
                self._cond.notify_all()
            elapsed = time.perf_counter() - tick
            if elapsed < interval:
                time.sleep(interval - elapsed)

    def take_acks(self):
        with self._cond:
            out = self._acks
            self._acks = []
            return out


def create_app(session: Session, fps: float = 60.0) -> FastAPI:
    runner = SessionRunner(session, fps)
    state = {"editor": None}

    @asynccontextmanager
    async def lifespan(app_):
        runner.start()
        yield
        runner.stop()

    app = FastAPI(lifespan=lifespan)
    app.state.runner = runner

    @app.websocket("/session")
    async def session_ws(ws: WebSocket):
        await ws.accept()
        try:
            raw = await asyncio.wait_for(ws.receive_text(), timeout=10.0)
            hello = json.loads(raw)
        except Exception:
            await ws.send_text(json.dumps(
                {"type": "error", "code": "bad_hello", "message": "expected hello"}))
            await ws.close()
            return
        if hello.get("type") != "hello" or hello.get("version") != PROTOCOL_VERSION:
            await ws.send_text(json.dumps(
                {"type": "error", "code": "version_mismatch",
                 "message": f"server speaks {PROTOCOL_VERSION}"}))
            await ws.close()
            return
        role = hello.get("role", "viewer")
        if role == "editor":
            if state["editor"] is not None:
                await ws.send_text(json.dumps(
                    {"type": "error", "code": "editor_taken",
                     "message": "an editor is already connected"}))
                await ws.close()
                return
            state["editor"] = ws
        await ws.send_text(json.dumps(
            {"type": "hello", "version": PROTOCOL_VERSION, "role": role}))
        topo = session.topology()
        await ws.send_text(json.dumps(
            {"type": "topology", "strands": topo["strands"],
             "version": topo["version"], "frame": session.frame}))

        sent_frame = -1
        sent_topology = topo["version"]
        my_edits = set()

        async def reader():
            nonlocal sent_frame
            while True:
                msg = await ws.receive_text()
                try:
                    edit = json.loads(msg)
                except json.JSONDecodeError:
                    await ws.send_text(json.dumps(
                        {"type": "error", "code": "bad_json",
                         "message": "unparsable message"}))
                    continue
                mtype = edit.get("type")
                if mtype == "edit":
                    payload = {"op": edit.get("op"), **edit.get("args", {})}
                    if "id" in edit:
                        payload["id"] = edit["id"]
                elif mtype == "param":
                    payload = {"op": "param_set", "key": edit.get("key"),
                               "value": edit.get("value")}
                    if "id" in edit:
                        payload["id"] = edit["id"]
                elif mtype in ("play", "pause", "reset"):
                    payload = {"op": mtype}
                else:
                    await ws.send_text(json.dumps(
                        {"type": "error", "code": "unknown_type",
                         "message": f"unsupported message type {mtype!r}"}))
                    continue
                if role != "editor" and mtype in ("edit", "param"):
                    await ws.send_text(json.dumps(
                        {"type": "error", "code": "read_only",
                         "message": "viewers cannot edit"}))
                    continue
                try:
                    eid = session.queue_edit(payload)
                    my_edits.add(eid)
                except EditError as exc:
                    await ws.send_text(json.dumps(
                        {"type": "error", "code": exc.code, "message": str(exc)}))

        async def writer():
            nonlocal sent_frame, sent_topology
            while True:
                for eid, err in runner.take_acks():
                    if eid in my_edits:
                        my_edits.discard(eid)
                        if err is None:
                            await ws.send_text(json.dumps({"type": "ack", "id": eid}))
                        else:
                            await ws.send_text(json.dumps(
                                {"type": "error", "code": err.code,
                                 "message": str(err), "id": eid}))
                snap = session.latest
                if snap is not None and session.playing and snap["frame"] > sent_frame:
                    if snap["topology_version"] != sent_topology:
                        topo_now = session.topology()
                        await ws.send_text(json.dumps(
                            {"type": "topology", "strands": topo_now["strands"],
                             "version": topo_now["version"], "frame": snap["frame"]}))
                        sent_topology = topo_now["version"]
                    await ws.send_text(json.dumps(
                        {"type": "frame", "index": snap["frame"],
                         "particles": snap["particles"]}))
                    await ws.send_bytes(snap["payload"])
                    sent_frame = snap["frame"]
                await asyncio.sleep(0.25 / fps)

        reader_task = asyncio.create_task(reader())
        writer_task = asyncio.create_task(writer())
        try:
            done, pending = await asyncio.wait(
                {reader_task, writer_task}, return_when=asyncio.FIRST_COMPLETED)
            for task in pending:
                task.cancel()
        except WebSocketDisconnect:
            pass
        finally:
            for task in (reader_task, writer_task):
                task.cancel()
            if state["editor"] is ws:
                state["editor"] = None

    return app


def serve(session: Session, host: str = "127.0.0.1", port: int = 8765,
          fps: float = 60.0):
    """Run the session server; raises OSError when the port is busy."""
    import uvicorn

    app = create_app(session, fps)
    config = uvicorn.Config(app, host=host, port=port, log_level="warning")
    server = uvicorn.Server(config)
    server.run()
