"""Drive the remote critic against the scripted local stub server.

Shows the chat-completions payload shape, reply parsing, the malformed-reply
retry, and the view-choice fallback — all without any network access.

Usage: python demos/remote_critic_offline.py
"""
import json

import numpy as np

from twinplan.critic import CriticQuery, RemoteConfig, RemoteCritic
from twinplan.stubserver import StubCriticServer

IMG = np.zeros((8, 8, 3), dtype=np.uint8)


def critic(endpoint: str) -> RemoteCritic:
    return RemoteCritic(RemoteConfig(endpoint=endpoint, model="demo-model",
                                     retries=3, backoff=0.0))


def main() -> None:
    # a malformed first reply is retried, then the answer is parsed
    with StubCriticServer(["hmm, tricky", "Best outcome: 2"]) as server:
        verdict = critic(server.endpoint).select_best(
            CriticQuery("press down on the spacebar", [IMG] * 5,
                        context="press the spacebar on the keyboard"))
        print(f"select_best -> index {verdict.chosen_index} "
              f"after {len(server.requests)} requests")
        body = server.requests[0]["body"]
        prompt = body["messages"][1]["content"][0]["text"]
        n_imgs = len(body["messages"][1]["content"]) - 1
        print(f"payload: model={body['model']} parts=1 text + {n_imgs} images")
        print("--- prompt ---")
        print(prompt)

    # forbidden view twice -> deterministic fallback, flagged
    with StubCriticServer(["ANSWER: front", "ANSWER: front"]) as server:
        view, fallback = critic(server.endpoint).choose_view(
            [IMG] * 4, "press down on the spacebar", previous="front")
        print(f"choose_view -> {view} (fallback={fallback})")

    # scripted decomposition
    reply = ("1. move above the spacebar\n2. press down on the spacebar\n"
             "FINGERS: no\nROTATION: no")
    with StubCriticServer([reply]) as server:
        plan = critic(server.endpoint).decompose(
            "press the spacebar on the keyboard", [IMG] * 4)
        print(f"decompose -> {json.dumps(list(plan.subtasks))}")


if __name__ == "__main__":
    main()
