"""Denoising Results | Home: method comparison table from metrics reports."""

import sys
from pathlib import Path

import pandas as pd
import streamlit as st

# Add project root to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.analysis.compare import best_methods, compare_reports, comparison_long, filter_reports, load_reports
from src.analysis.metrics import MetricsReport

st.set_page_config(
    page_title="Denoising Results",
    page_icon="🔬",
    layout="wide",
)

st.title("🔬 Denoising Results")
st.markdown("Browse metrics reports written by `python -m src.cli.main eval`.")

results_dir = st.sidebar.text_input("Results directory", value="runs")
st.session_state["results_dir"] = results_dir


@st.cache_data
def get_reports(directory: str) -> list[dict]:
    return [r.model_dump() for r in load_reports(directory, "metrics.json")]


if not Path(results_dir).is_dir():
    st.warning(f"Directory `{results_dir}` not found.")
    st.stop()

reports = [MetricsReport(**r) for r in get_reports(results_dir)]
if not reports:
    st.warning("No metrics reports found. Run the `eval` command first.")
    st.stop()

# --- Sidebar Filters ---
st.sidebar.header("🔍 Filters")
methods = st.sidebar.multiselect("Method", options=sorted({r.method for r in reports}), default=[])
datasets = st.sidebar.multiselect("Dataset", options=sorted({r.dataset for r in reports}), default=[])
selected = filter_reports(reports, methods or None, datasets or None)

if not selected:
    st.info("No reports match the current filters.")
    st.stop()

# --- Comparison Table ---
st.markdown(f"### Comparison of {len({r.method for r in selected})} methods")
table = compare_reports(selected)
st.dataframe(table.style.format("{:.4g}"), use_container_width=True)

best = best_methods(table)
if not best.empty:
    st.caption("🏆 Best per column: " + ", ".join(f"{d} {m}: **{w}**" for (d, m), w in best.items()))

# --- Details ---
st.markdown("---")
st.markdown("### Mean ± std per run")
long = comparison_long(selected)
st.dataframe(
    long,
    use_container_width=True,
    hide_index=True,
    column_config={
        "method": "Method",
        "dataset": "Dataset",
        "n_images": "Images",
        "MSE": st.column_config.NumberColumn("MSE", format="%.4g"),
        "PSNR": st.column_config.NumberColumn("PSNR (dB)", format="%.3f"),
        "SSIM": st.column_config.NumberColumn("SSIM", format="%.4f"),
    },
)

# --- Export ---
st.markdown("---")
col_a, _ = st.columns([1, 4])
with col_a:
    st.download_button("📥 Download CSV", long.to_csv(index=False), "comparison.csv", "text/csv")

# --- Per-image distribution ---
st.markdown("---")
st.markdown("### Per-image PSNR")
frames = []
for r in selected:
    frame = r.to_frame()
    frame["run"] = f"{r.method} / {r.dataset}"
    frames.append(frame)
per_image = pd.concat(frames, ignore_index=True)
finite = per_image[per_image["psnr_db"].abs() != float("inf")]
if not finite.empty:
    import plotly.express as px

    fig = px.box(finite, x="run", y="psnr_db", color="run", labels={"psnr_db": "PSNR (dB)", "run": ""}, height=400)
    fig.update_layout(showlegend=False)
    st.plotly_chart(fig, use_container_width=True)
