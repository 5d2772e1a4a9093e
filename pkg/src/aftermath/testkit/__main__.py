"""Run a mock service in the foreground: ``python -m aftermath.testkit vlm|sr ...``."""

import argparse
import json
import time

from aftermath.testkit.fixtures import gen_fixture_scene, random_labels
from aftermath.testkit.mocks import MockScript, fixture_labels, serve_mock_sr, serve_mock_vlm


def main(argv=None):
    parser = argparse.ArgumentParser(prog="python -m aftermath.testkit")
    sub = parser.add_subparsers(dest="what", required=True)
    v = sub.add_parser("vlm", help="mock VLM endpoint (POST /chat)")
    v.add_argument("--port", type=int, default=8101)
    v.add_argument("--mode", choices=["script", "truthful", "echo"], default="script")
    v.add_argument("--script", help="JSON file {fingerprint: reply | [replies]}")
    v.add_argument("--truthful-from", help="xBD-layout directory whose post labels drive replies")
    s = sub.add_parser("sr", help="mock SR endpoint (POST /enhance)")
    s.add_argument("--port", type=int, default=8102)
    s.add_argument("--mode", choices=["nearest", "identity"], default="nearest")
    f = sub.add_parser("fixture", help="write a synthetic xBD-layout scene")
    f.add_argument("--out", required=True)
    f.add_argument("-n", type=int, default=20)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--scene", default="fixture-tornado_00000000")
    args = parser.parse_args(argv)

    if args.what == "fixture":
        pair = gen_fixture_scene(args.out, args.n, random_labels(args.n, args.seed), args.scene, args.seed)
        print(pair.label_post)
        return
    if args.what == "vlm":
        if args.mode == "truthful" and not args.truthful_from:
            parser.error("--mode truthful needs --truthful-from")
        script = MockScript()
        if args.truthful_from:
            script = MockScript.truthful(fixture_labels(args.truthful_from))
        elif args.script:
            with open(args.script) as fh:
                script = MockScript(json.load(fh))
        server = serve_mock_vlm(script, args.port, "echo" if args.mode == "echo" else "script")
    else:
        server = serve_mock_sr(args.mode, args.port)
    print(f"serving on {server.url}", flush=True)
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        server.stop()


if __name__ == "__main__":
    main()
