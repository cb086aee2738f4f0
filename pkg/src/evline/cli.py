"""Command-line front end.

Thin client over the HTTP service: by default the app is mounted in-process
(no socket); --server points the same commands at a remote instance. Exit
codes: 0 success, 1 bad input, 2 internal failure.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import sys

import httpx

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_INTERNAL = 2


class InputError(Exception):
    """Bad input from the user; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; bad command lines are input errors
    def error(self, message):
        self.print_usage(sys.stderr)
        raise InputError(message)


class ServiceClient:
    """POST/GET against a remote server or the in-process app."""

    def __init__(self, server: str | None):
        if server:
            self._sync = httpx.Client(base_url=server.rstrip("/"), timeout=600.0)
            self._async = None
        else:
            from .service import create_app
            transport = httpx.ASGITransport(app=create_app())
            self._sync = None
            self._async = httpx.AsyncClient(transport=transport,
                                            base_url="http://evline.internal",
                                            timeout=None)

    def post(self, path: str, payload: dict) -> dict:
        if self._sync is not None:
            r = self._sync.post(path, json=payload)
        else:
            r = asyncio.run(self._async.post(path, json=payload))
        return self._unwrap(r)

    def get(self, path: str) -> dict:
        if self._sync is not None:
            r = self._sync.get(path)
        else:
            r = asyncio.run(self._async.get(path))
        return self._unwrap(r)

    @staticmethod
    def _unwrap(r: httpx.Response) -> dict:
        if r.status_code >= 500:
            raise RuntimeError(f"service error: {r.text}")
        if r.status_code >= 400:
            try:
                detail = r.json().get("detail", r.text)
            except Exception:
                detail = r.text
            raise InputError(str(detail))
        return r.json()

    def close(self):
        if self._sync is not None:
            self._sync.close()
        else:
            asyncio.run(self._async.aclose())


def _client(args) -> ServiceClient:
    return ServiceClient(getattr(args, "server", None))


def cmd_track(args) -> int:
    client = _client(args)
    try:
        out = client.post("/jobs/track", {
            "events_path": args.events,
            "out_path": args.out,
            "config_path": args.config,
            "snapshot_interval_ms": args.snapshot_interval_ms,
            "deterministic": args.deterministic,
            "hibernation": False if args.no_hibernation else None,
            "polarity_mode": "merged" if args.no_hibernation else None,
        })
    finally:
        client.close()
    d = out["dispositions"]
    print(f"processed {out['events']} events -> {out['snapshots']} snapshots, "
          f"{out['lines_promoted']} lines promoted "
          f"({out['us_per_event']:.2f} us/event)")
    order = ["suppressed", "line", "ambiguous", "cluster", "new_cluster",
             "unassigned", "out_of_bounds"]
    print("dispositions: " + "  ".join(f"{k}={d.get(k, 0)}" for k in order))
    print(f"wrote {out['out_path']}")
    return EXIT_OK


def cmd_synth(args) -> int:
    client = _client(args)
    try:
        out = client.post("/jobs/synth", {
            "scene_path": args.scene,
            "out_events_path": args.out,
            "out_truth_path": args.truth,
            "seed": args.seed,
            "binary": args.binary,
        })
    finally:
        client.close()
    print(f"generated {out['n_events']} events over {out['duration_ms']:g} ms "
          f"({out['n_tracks']} tracks) -> {out['out_events_path']}")
    if out["out_truth_path"]:
        print(f"wrote truth {out['out_truth_path']}")
    return EXIT_OK


def cmd_eval(args) -> int:
    client = _client(args)
    try:
        out = client.post("/jobs/eval", {
            "track_path": args.tracks,
            "truth_path": args.truth,
            "match_dist_px": args.match_dist_px,
            "match_angle_deg": args.match_angle_deg,
        })
    finally:
        client.close()
    if args.json:
        # machine mode: nothing but the JSON document on stdout
        print(json.dumps(out, indent=2, sort_keys=True))
        return EXIT_OK
    print(f"tracked lines: {out['tracked_lines']}  "
          f"matched: {out['matched_lines']}  false: {out['false_lines']}")
    print(f"mean lifetime: {out['mean_lifetime_s']:.3f} s  "
          f"ID switches: {out['total_id_switches']}")
    print(f"midpoint RMS: {out['midpoint_rms_px']:.3f} px  "
          f"direction RMS: {out['direction_rms_deg']:.3f} deg")
    return EXIT_OK


def cmd_bench(args) -> int:
    client = _client(args)
    try:
        out = client.post("/jobs/bench", {
            "max_lines": args.max_lines,
            "max_clusters": args.max_clusters,
            "line_duration_ms": args.line_duration_ms,
            "cluster_duration_ms": args.cluster_duration_ms,
            "throughput_ms": args.throughput_ms,
            "seed": args.seed,
        })
    finally:
        client.close()
    sys.stdout.write(out["text"])
    return EXIT_OK


def cmd_render(args) -> int:
    client = _client(args)
    try:
        out = client.post("/jobs/render", {
            "track_path": args.tracks,
            "out_dir": args.out,
            "width": args.width,
            "height": args.height,
            "events_path": args.events,
            "scale": args.scale,
        })
    finally:
        client.close()
    print(f"rendered {out['n_frames']} frames into {out['out_dir']}")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app
    uvicorn.run(create_app(), host=args.host, port=args.port)
    return EXIT_OK


def cmd_config(args) -> int:
    client = _client(args)
    try:
        out = client.get("/config/default")
    finally:
        client.close()
    sys.stdout.write(out["text"])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="evline",
                description="Streaming line tracking for event cameras")
    sub = p.add_subparsers(dest="command", required=True)

    def add_server(sp):
        sp.add_argument("--server", metavar="URL", default=None,
                        help="remote service URL (default: run in-process)")

    sp = sub.add_parser("track", help="track an event file")
    sp.add_argument("events", help="input event file (text or binary)")
    sp.add_argument("out", help="output track file")
    sp.add_argument("--config", default=None, help="config file")
    sp.add_argument("--snapshot-interval-ms", type=float, default=10.0)
    sp.add_argument("--deterministic", action="store_true",
                    help="interleave maintenance with ingest (bit-reproducible)")
    sp.add_argument("--no-hibernation", action="store_true",
                    help="baseline variant: hibernation off, merged polarity")
    add_server(sp)
    sp.set_defaults(func=cmd_track)

    sp = sub.add_parser("synth", help="generate a synthetic event file")
    sp.add_argument("scene", help="scene description file")
    sp.add_argument("out", help="output event file")
    sp.add_argument("--truth", default=None, help="also write ground truth")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--binary", action="store_true",
                    help="write the packed binary event format")
    add_server(sp)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("eval", help="score a track file against ground truth")
    sp.add_argument("tracks", help="track file from `track`")
    sp.add_argument("truth", help="truth file from `synth --truth`")
    sp.add_argument("--match-dist-px", type=float, default=5.0)
    sp.add_argument("--match-angle-deg", type=float, default=10.0)
    sp.add_argument("--json", action="store_true", help="full report as JSON")
    add_server(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("bench", help="cost-scaling sweeps and throughput")
    sp.add_argument("--max-lines", type=int, default=10)
    sp.add_argument("--max-clusters", type=int, default=12)
    sp.add_argument("--line-duration-ms", type=float, default=900.0)
    sp.add_argument("--cluster-duration-ms", type=float, default=2500.0)
    sp.add_argument("--throughput-ms", type=float, default=4000.0)
    sp.add_argument("--seed", type=int, default=7)
    add_server(sp)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("render", help="draw track snapshots as PNG frames")
    sp.add_argument("tracks")
    sp.add_argument("out", help="output directory")
    sp.add_argument("--events", default=None, help="event file for backdrop dots")
    sp.add_argument("--width", type=int, default=346)
    sp.add_argument("--height", type=int, default=260)
    sp.add_argument("--scale", type=int, default=3)
    add_server(sp)
    sp.set_defaults(func=cmd_render)

    sp = sub.add_parser("serve", help="run the HTTP service")
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=8000)
    sp.set_defaults(func=cmd_serve)

    sp = sub.add_parser("config", help="print the default config file")
    add_server(sp)
    sp.set_defaults(func=cmd_config)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except KeyboardInterrupt:
        return EXIT_INTERNAL
    except Exception as e:
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
