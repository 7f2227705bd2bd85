import pandas as pd

RENAME_MAP = {
    "method": "Method",
    "dataset": "Dataset",
    "k": "k",
    "seeds": "Runs",
    "post_hoc_accuracy_mean": "Post-hoc acc. (mean)",
    "post_hoc_accuracy_std": "Post-hoc acc. (std)",
    "ace_mean": "ACE (mean)",
    "ace_std": "ACE (std)",
}

METHOD_LABELS = {
    "causal": "Ours (causal)",
    "random": "Random",
    "saliency": "Saliency",
}


def nice_headers(df: pd.DataFrame) -> pd.DataFrame:
    return df.rename(columns={k: v for k, v in RENAME_MAP.items() if k in df.columns})
