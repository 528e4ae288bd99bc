import streamlit as st
import numpy as np
import pandas as pd
from utils.config import Command, GcaConfig, NuisanceConfig, RunSpec, Setting
from utils.errors import ExposureLabError
from utils.harness import replicate
from utils.run_progress import RunProgressTracker

# Page configuration
st.set_page_config(
    page_title="Exposure Mapping Lab",
    page_icon="🕸️",
    layout="wide"
)

COMMANDS = {
    "Validity test": Command.TEST_VALIDITY,
    "Direct effect": Command.ESTIMATE_DIRECT,
    "Test, select, estimate": Command.ANALYZE,
}


def initialize_session_state():
    if 'tracker' not in st.session_state:
        st.session_state.tracker = RunProgressTracker()
    if 'outcome' not in st.session_state:
        st.session_state.outcome = None


def render_progress(tracker: RunProgressTracker):
    """Render the replication steps with status, duration and a progress bar"""
    st.markdown("### 🔍 Replication Progress")

    for step in tracker.steps:
        col1, col2 = st.columns([7, 3])

        status_emoji = {
            "pending": "⏳",
            "in_progress": "🔄",
            "completed": "✅",
            "failed": "❌"
        }.get(step.status, "⏳")

        with col1:
            st.markdown(f"{status_emoji} **{step.name}**")
            if step.details:
                with st.expander("Details"):
                    for key, value in step.details.items():
                        st.write(f"**{key}:** {value}")

        with col2:
            if step.duration is not None:
                st.text(f"Duration: {step.duration:.1f}s")
            elif step.status == "in_progress":
                st.text("In progress...")

        if step.status == "completed":
            st.progress(1.0)
        elif step.status == "in_progress":
            st.progress(0.5)
        else:
            st.progress(0.0)


def exposure_summary(outcome) -> pd.DataFrame:
    """Summary statistics of the researcher-defined, learned and true exposures"""
    columns = {}
    if outcome.researcher is not None:
        columns["researcher (Ż)"] = outcome.researcher.values
    if outcome.learned is not None:
        columns["learned (Z̃)"] = outcome.learned.values
    if outcome.dataset is not None:
        columns["true"] = outcome.dataset.Z_true
    summary = {
        name: {
            "mean": float(np.mean(values)),
            "std": float(np.std(values)),
            "min": float(np.min(values)),
            "max": float(np.max(values)),
            "unique": int(np.unique(values).size),
        }
        for name, values in columns.items()
    }
    return pd.DataFrame(summary).T


def sidebar_spec():
    st.sidebar.header("Replication")
    label = st.sidebar.selectbox("Command", list(COMMANDS))
    command = COMMANDS[label]
    if command is Command.ESTIMATE_DIRECT:
        setting = Setting.DIRECT
        st.sidebar.text("Setting: DIRECT")
    else:
        setting = Setting(st.sidebar.selectbox("Setting", [s.value for s in Setting]))
    n = st.sidebar.number_input("Sample size n", min_value=50, max_value=2000, value=500, step=50)
    seed = st.sidebar.number_input("Base seed", value=2024, step=1)
    L = st.sidebar.slider("Partition cells L", min_value=2, max_value=8, value=4)
    epochs = st.sidebar.number_input("GCA epochs", min_value=10, max_value=2000, value=200, step=10)
    method = st.sidebar.radio("Direct-effect estimator", ["ipw", "dr"], horizontal=True)
    spec = RunSpec(
        command=command,
        settings=[setting],
        n_list=[int(n)],
        base_seed=int(seed),
        L=L,
        method=method,
        workers=1,
        gca=GcaConfig(epochs=int(epochs)),
        nuisance=NuisanceConfig(),
    )
    return spec, setting, int(n)


def main():
    st.title("🕸️ Exposure Mapping Lab")
    st.markdown("""
    Simulate a population on a random geometric graph, learn an exposure mapping with a
    graph convolutional autoencoder, test whether the researcher-defined mapping captures
    all interference, and estimate the direct effect of own treatment.
    """)

    initialize_session_state()

    try:
        spec, setting, n = sidebar_spec()
    except ValueError as e:
        st.error(f"Invalid settings: {str(e)}")
        return

    if st.sidebar.button("Run", type="primary"):
        tracker = st.session_state.tracker
        with st.spinner("Running replication..."):
            try:
                st.session_state.outcome = replicate(spec, setting, n, 0, tracker=tracker)
            except ExposureLabError as e:
                st.error(f"Replication failed: {str(e)}")
                tracker.fail_step(tracker.current_step_index, {"Error": str(e)})
                st.session_state.outcome = None

    render_progress(st.session_state.tracker)

    outcome = st.session_state.outcome
    if outcome is None:
        return
    st.divider()

    record = outcome.record
    if record.get("flagged"):
        st.warning(f"Replication flagged: {record['flag_reason']}")

    col1, col2 = st.columns(2)
    with col1:
        st.subheader("🧪 Validity Test")
        if "p_value" in record:
            st.metric("p-value", f"{record['p_value']:.4f}")
            st.metric("Reject at 0.05", "yes" if record["reject_at_05"] else "no")
        else:
            st.text("Not run")
    with col2:
        st.subheader("🎯 Direct Effect")
        if "estimate" in record:
            st.metric("Estimate (true value 1)", f"{record['estimate']:.4f}",
                      delta=f"se {record['se']:.4f}", delta_color="off")
            if "selected_exposure" in record:
                st.text(f"Exposure used: {record['selected_exposure']}")
        else:
            st.text("Not run")
    st.divider()

    st.subheader("📊 Exposure Summary")
    st.dataframe(exposure_summary(outcome))

    st.subheader("📝 Replication Record")
    st.json({k: v for k, v in record.items()})


if __name__ == "__main__":
    main()
