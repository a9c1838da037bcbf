"""Denoising Results | Compare: FSC curves of reconstructed maps."""

import sys
from pathlib import Path

import streamlit as st

sys.path.insert(0, str(Path(__file__).parent.parent.parent))

from src.analysis.fsc import DEFAULT_THRESHOLD, FSCCurve, resolution_at
from src.analysis.plots import fsc_figure

st.set_page_config(page_title="Compare FSC", page_icon="📐", layout="wide")
st.title("📐 Compare FSC Curves")
st.markdown("Overlay `fsc.csv` files written by the `fsc` command.")

results_dir = st.session_state.get("results_dir", "runs")
root = Path(results_dir)
if not root.is_dir():
    st.warning(f"Directory `{results_dir}` not found. Set it on the Home page.")
    st.stop()

paths = sorted(root.rglob("fsc.csv"))
if not paths:
    st.warning("No FSC curves found. Run the `fsc` command first.")
    st.stop()

labels = {str(p.parent.relative_to(root)) or p.parent.name: p for p in paths}
selected = st.multiselect("Select curves", options=list(labels), default=list(labels)[:4])
threshold = st.number_input("Threshold", value=DEFAULT_THRESHOLD, min_value=0.0, max_value=1.0, step=0.01)

if selected:
    curves = {label: FSCCurve.read_csv(labels[label]) for label in selected}
    st.plotly_chart(fsc_figure(curves, threshold), use_container_width=True)

    st.markdown("### Resolution")
    cols = st.columns(min(len(curves), 4))
    for i, (label, curve) in enumerate(curves.items()):
        estimate = resolution_at(curve, threshold)
        cols[i % len(cols)].metric(label, f"{estimate.resolution:.2f} Å", "no crossing" if not estimate.crossed else None)
else:
    st.info("👆 Select one or more curves to plot.")
