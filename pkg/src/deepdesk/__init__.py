"""deepdesk: a hybrid-knowledge deep-research engine.

Answers a research question by decomposing it into subtasks, analyzing both
web sources and structured tables (retrieval, generated analysis code run in
a sandbox, vision-checked insights), and writing a multimodal markdown
report.  Ships with an LLM-as-judge evaluation harness for scoring reports.
"""

__version__ = "0.1.0"
