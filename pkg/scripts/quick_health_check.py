"""
Quick health check script for a running CrowdAttr gateway.

This script performs rapid diagnostics to verify:
- The gateway is running and responsive
- The worker pool is configured
- The NMS and synthetic endpoints answer a minimal request
"""

import sys
from typing import Any, Dict, Optional

import httpx

BACKEND_URL = "http://localhost:8000"

# Two boxes at IoU 0.6: greedy NMS at 0.5 keeps one
NMS_SAMPLE = {
    "variant": "greedy",
    "records": [
        {
            "image_id": "health-check",
            "boxes": [
                {"box": [100, 0, 140, 100], "score": 0.9},
                {"box": [110, 0, 150, 100], "score": 0.8},
            ],
        }
    ],
}


def check_endpoint(
    client: httpx.Client, method: str, path: str, name: str, body: Optional[dict] = None
) -> Dict[str, Any]:
    """
    Checks if an endpoint is responsive and healthy.

    Args:
        client (httpx.Client): Client bound to the gateway.
        method (str): HTTP method.
        path (str): Endpoint path.
        name (str): Human-readable name for the endpoint.
        body (dict, optional): JSON body for POST requests.

    Returns:
        dict: Result dictionary with status and details.
    """
    try:
        response = client.request(method, path, json=body)
        if response.status_code == 200:
            return {"name": name, "status": "OK", "code": 200, "data": response.json()}
        return {
            "name": name,
            "status": "ERROR",
            "code": response.status_code,
            "error": response.text[:200],
        }
    except httpx.ConnectError:
        return {"name": name, "status": "NO CONNECTION", "error": "Cannot connect to server"}
    except httpx.TimeoutException:
        return {"name": name, "status": "TIMEOUT", "error": "Request timed out"}
    except Exception as e:
        return {"name": name, "status": "ERROR", "error": str(e)}


def main(base_url: str = BACKEND_URL) -> int:
    """
    Main health check routine.

    Returns:
        int: 0 when every check passed, 1 otherwise.
    """
    print("=" * 80)
    print("  CROWDATTR - QUICK HEALTH CHECK")
    print("=" * 80)
    print()

    checks = [
        ("GET", "/api/health", "Health (/api/health)", None),
        ("POST", "/api/nms", "Greedy NMS check", NMS_SAMPLE),
        ("POST", "/api/synth", "Synthetic scene check", {"seed": 0, "n_images": 1}),
    ]

    all_ok = True
    with httpx.Client(base_url=base_url, timeout=5.0) as client:
        for method, path, name, body in checks:
            result = check_endpoint(client, method, path, name, body)
            if result["status"] != "OK":
                all_ok = False
                print(f"[{result['status']}] {name}: {result.get('error', '')}")
                continue
            print(f"[OK] {name}")

            data = result["data"]
            if path == "/api/health":
                workers = data.get("workers", {})
                print(f"    Workers: {workers.get('workers', 1)} (threaded={workers.get('threaded', False)})")
            elif path == "/api/nms" and len(data[0]["boxes"]) != 1:
                all_ok = False
                print(f"    Unexpected NMS result: {len(data[0]['boxes'])} boxes kept")

    print()
    print("=" * 80)
    if all_ok:
        print("ALL CHECKS PASSED")
        return 0
    print("SOME CHECKS FAILED")
    print("  1. Verify the gateway is running: python -m app.back.main")
    print("  2. Check the gateway logs for errors")
    return 1


if __name__ == "__main__":
    sys.exit(main(sys.argv[1] if len(sys.argv) > 1 else BACKEND_URL))
