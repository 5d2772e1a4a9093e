"""Start the mock VLM and SR services together for manual CLI sessions.

    python scripts/serve_mocks.py --truthful-from out/fixture/data
    export AFTERMATH_VLM_URL=http://127.0.0.1:8101 AFTERMATH_SR_URL=http://127.0.0.1:8102
"""

import argparse
import json
import time

from aftermath.testkit import MockScript, fixture_labels, serve_mock_sr, serve_mock_vlm


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--vlm-port", type=int, default=8101)
    p.add_argument("--sr-port", type=int, default=8102)
    p.add_argument("--sr-mode", choices=["nearest", "identity"], default="nearest")
    p.add_argument("--script", help="JSON {fingerprint: reply | [replies]}")
    p.add_argument("--truthful-from", help="xBD-layout directory driving truthful replies")
    p.add_argument("--echo", action="store_true")
    args = p.parse_args()

    script = MockScript()
    if args.truthful_from:
        script = MockScript.truthful(fixture_labels(args.truthful_from))
    elif args.script:
        with open(args.script) as fh:
            script = MockScript(json.load(fh))
    vlm = serve_mock_vlm(script, args.vlm_port, "echo" if args.echo else "script")
    sr = serve_mock_sr(args.sr_mode, args.sr_port)
    print(f"AFTERMATH_VLM_URL={vlm.url}\nAFTERMATH_SR_URL={sr.url}", flush=True)
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        vlm.stop()
        sr.stop()


if __name__ == "__main__":
    main()
