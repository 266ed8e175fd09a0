"""Knowledge-grounded multi-choice visual question answering.

Retrieves weighted facts from a commonsense graph for each scene,
embeds them into a slot memory with stacked LSTMs, reads the memory with
iterative soft attention, and fuses the result with image/question/answer
features to score each candidate answer. Includes a synthetic QA
generator and a training/evaluation CLI.
"""

__version__ = "0.1.0"
