import pytest

from icsort import cohort as co
from icsort import network, pipeline, spatial, temporal


@pytest.fixture(scope="session")
def toy_params():
    return co.GeneratorParams(
        n_patients=4,
        ics_per_patient=24,
        class_mix=(0.5, 0.375, 0.125),
        slice_dims=(4, 48, 48),
        bold_len=300,
        seed=1234,
    )


@pytest.fixture(scope="session")
def toy_cohort(toy_params):
    return co.generate_cohort(toy_params)


@pytest.fixture(scope="session")
def toy_network_config():
    # Montage of 4 slices of 48x48 -> 96x96 grid, downscaled hard for speed.
    return network.NetworkConfig(
        input_dims=(24, 24, 1),
        conv_filters=(4, 8),
        dense_units=16,
        max_epochs=12,
        early_stop_patience=2,
        batch_size=32,
        learning_rate=1e-3,
    )


@pytest.fixture(scope="session")
def toy_prepared(toy_cohort, toy_network_config):
    return pipeline.prepare_cohort(toy_cohort, toy_network_config)


@pytest.fixture(scope="session")
def toy_settings(toy_network_config):
    return pipeline.RunSettings(network=toy_network_config, seed=99)


@pytest.fixture(scope="session")
def toy_run(toy_prepared, toy_settings):
    results, step1 = pipeline.run_lopo_cv(toy_prepared, toy_settings)
    return results, step1


def first_of(cohort, label):
    for patient in cohort.patients:
        for ic in patient.ics:
            if ic.truth == label:
                return ic
    raise AssertionError(f"no IC with label {label}")


@pytest.fixture(scope="session")
def spatial_params():
    return spatial.params_for_dims(48, 48)


@pytest.fixture(scope="session")
def temporal_params():
    return temporal.TemporalParams(tr_seconds=2.0)
