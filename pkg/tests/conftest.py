from importlib import resources

import numpy as np
import pytest

from anesmpc import compensation, pkpd, terminal

Q_DIAG = np.diag([1.0, 10.0, 1.0, 10.0])
R_EYE = np.eye(2)
U_BOUNDS = compensation.InputBox(lower=[0.0, 0.0], upper=[6.67, 16.67])
M_BAR_PAPER = np.array([0.12, 0.27])


def patient_path():
    return resources.files("anesmpc") / "data" / "patient_eleveld_f56.ini"


def controller_path():
    return resources.files("anesmpc") / "data" / "controller.ini"


@pytest.fixture(scope="session")
def patient():
    return pkpd.load_patient(patient_path())


@pytest.fixture(scope="session")
def cont(patient):
    return pkpd.build_continuous(patient.pk_propofol, patient.pk_remifentanil)


@pytest.fixture(scope="session")
def disc(cont):
    return pkpd.discretize_euler(cont, 5.0)


@pytest.fixture(scope="session")
def gain(disc):
    return compensation.compensation_gain(disc)


@pytest.fixture(scope="session")
def v_box():
    return compensation.tracking_input_set(U_BOUNDS, M_BAR_PAPER)


@pytest.fixture(scope="session")
def ingredients(disc, v_box):
    return terminal.compute_terminal_ingredients(disc, v_box, Q_DIAG, R_EYE, lam=0.99)


def random_pk(rng):
    return pkpd.DrugPkParams(
        V1=rng.uniform(2.0, 10.0),
        V2=rng.uniform(5.0, 30.0),
        V3=rng.uniform(1.0, 200.0),
        Cl1=rng.uniform(0.01, 0.06),
        Cl2=rng.uniform(0.005, 0.04),
        Cl3=rng.uniform(0.0005, 0.02),
        ke=rng.uniform(0.001, 0.01),
    )
