# coding: utf-8

# # Talking to a model endpoint
#
# The gateway posts OpenAI-style chat and embedding requests.  It caches
# every successful body on disk, keyed by the request, and retries
# transient failures with exponential backoff.  Here a fake transport
# stands in for the network.

import json
import tempfile

import httpx

from conceptrec import gateway as gw

attempts = {"n": 0}


def flaky_server(request):
    attempts["n"] += 1
    if attempts["n"] < 3:
        return httpx.Response(503, text="busy")
    prompt = json.loads(request.content)["messages"][-1]["content"]
    answer = {"choices": [{"message": {"content": f"echo: {prompt}"}}]}
    return httpx.Response(200, text=json.dumps(answer))


cache = tempfile.mkdtemp()
client = httpx.Client(transport=httpx.MockTransport(flaky_server))
g = gw.Gateway("http://model.local/v1", api_key="demo-key", cache_dir=cache, client=client, sleep=lambda s: None)

request = gw.chat_request("some-model", "You are terse.", "hello")
response = g.call(request)
print(gw.chat_content(response.body), "| attempts:", response.attempts)

# The same request again is answered from the cache, without a network call.
again = g.call(request)
print("network calls so far:", g.network_calls, "| cached attempts:", again.attempts)

# A different retry salt makes a distinct request, so it is not cached.
print(g.call(gw.chat_request("some-model", "You are terse.", "hello", salt=1)).attempts)


# ## Failures that retrying cannot fix

def refusing_server(request):
    return httpx.Response(401, text="bad key")


g2 = gw.Gateway(
    "http://model.local/v1", cache_dir=tempfile.mkdtemp(), client=httpx.Client(transport=httpx.MockTransport(refusing_server))
)
try:
    g2.call(gw.chat_request("some-model", "s", "u"))
except gw.NonRetryableError as err:
    print("gave up at once:", err)


# ## Bounded concurrency
#
# call_batch keeps at most max_in_flight requests open and returns results
# in input order.

requests = [gw.chat_request("some-model", "s", f"question {i}") for i in range(6)]
for r in g.call_batch(requests, max_in_flight=3):
    print(gw.chat_content(r.body))
