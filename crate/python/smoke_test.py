#!/usr/bin/env python3
"""Smoke test for the statefuzz_py extension module.

Builds nothing itself: run `cargo build -p statefuzz-py` first, then
`python3 python/smoke_test.py`. The script locates the cdylib under
target/, stages it under an importable name, and exercises the bindings.
"""

import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def stage_module() -> Path:
    candidates = [
        REPO / "target" / profile / name
        for profile in ("debug", "release")
        for name in ("libstatefuzz_py.so", "libstatefuzz_py.dylib", "statefuzz_py.dll")
    ]
    built = next((p for p in candidates if p.exists()), None)
    if built is None:
        print("cdylib not found; building with cargo ...")
        subprocess.run(["cargo", "build", "-p", "statefuzz-py"], cwd=REPO, check=True)
        built = next(p for p in candidates if p.exists())
    stage = Path(tempfile.mkdtemp(prefix="statefuzz_py_"))
    shutil.copy2(built, stage / "statefuzz_py.so")
    return stage


sys.path.insert(0, str(stage_module()))
import statefuzz_py as sf  # noqa: E402


def main() -> None:
    assert set(sf.targets()) >= {"mini-ftp", "echo", "binproto"}

    # Fuzzy hashing: locality and identity.
    a = sf.tlsh_hash(b"GET /index.html HTTP/1.0\r\n" * 40)
    b = sf.tlsh_hash(b"GET /index.htmk HTTP/1.0\r\n" * 40)
    c = sf.tlsh_hash(bytes(range(256)) * 4)
    assert sf.tlsh_distance(a, a) == 0
    assert sf.tlsh_distance(a, b) < sf.tlsh_distance(a, c)

    # Registry clusters near-identical snapshots onto one state id.
    reg = sf.StateRegistry()
    assert reg.get_state_id(a, 100) == reg.get_state_id(b, 100)
    assert reg.count() == 1

    # Replay a login session: SYST and NOOP keep the session in one state.
    r = sf.replay("mini-ftp", [b"USER anon", b"PASS x", b"SYST", b"NOOP"])
    assert r["outcome"] == "ok"
    assert r["replies"][1][0].startswith(b"230")
    s = r["state_seq"]
    assert s[1] == s[2] == s[3] and s[0] != s[1]

    # The planted deep-state bug reproduces through the bindings.
    crash = sf.replay(
        "mini-ftp",
        [b"USER a", b"PASS b", b"PORT 1,2", b"STOR " + b"A" * 80],
    )
    assert crash["outcome"].startswith("crash:bug01")

    # Input format round-trip.
    msgs = [b"USER anon", b"", b"\x00\xff"]
    assert sf.safl_decode(sf.safl_encode(msgs)) == msgs

    # A short campaign on the echo server collapses to two states.
    summary = sf.run_campaign("echo", [[b"ping", b"pong"]], 500, rng_seed=3)
    assert summary["execs"] == 500
    assert summary["states"] == 2
    assert summary["crashes_unique"] == 0

    print("smoke test ok:", summary)


if __name__ == "__main__":
    main()
