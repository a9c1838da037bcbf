"""Denoising Results | Analysis: training loss curves."""

import sys
from pathlib import Path

import pandas as pd
import streamlit as st

sys.path.insert(0, str(Path(__file__).parent.parent.parent))

from src.analysis.plots import loss_figure

st.set_page_config(page_title="Training Analysis", page_icon="📊", layout="wide")
st.title("📊 Training Analysis")

results_dir = st.session_state.get("results_dir", "runs")
root = Path(results_dir)
if not root.is_dir():
    st.warning(f"Directory `{results_dir}` not found. Set it on the Home page.")
    st.stop()


@st.cache_data
def get_history(path: str) -> pd.DataFrame:
    return pd.read_csv(path)


paths = sorted(root.rglob("*_loss.csv"))
if not paths:
    st.warning("No loss histories found. Run the `train` command first.")
    st.stop()

labels = {str(p.relative_to(root)): p for p in paths}
selected = st.multiselect("Loss histories", options=list(labels), default=list(labels)[:2])
window = st.slider("Moving-average window (steps)", min_value=1, max_value=500, value=50)

if selected:
    histories = {label: get_history(str(labels[label])) for label in selected}
    st.plotly_chart(loss_figure(histories, window), use_container_width=True)

    st.markdown("---")
    st.markdown("### Per-epoch summary")
    for label, history in histories.items():
        st.markdown(f"**{label}**")
        per_epoch = history.groupby("epoch")["loss"].agg(["mean", "min", "max", "count"]).reset_index()
        st.dataframe(per_epoch, use_container_width=True, hide_index=True)
        st.caption(
            f"💡 {len(history)} steps over {history['epoch'].nunique()} epochs; "
            f"last-epoch mean {per_epoch['mean'].iloc[-1]:.5f}."
        )
