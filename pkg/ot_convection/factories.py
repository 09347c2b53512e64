import factory

from ot_convection import __version__
from ot_convection.models import RunRecord
from ot_convection.presets import box_atoms, cloud_values
from ot_convection.rearrange import LagrangianCloud


class RunRecordFactory(factory.django.DjangoModelFactory):
    class Meta:
        model = RunRecord

    subcommand = "aht"
    seed = 0
    config = factory.LazyAttribute(lambda record: {"subcommand": record.subcommand, "values": {}})
    output_dir = factory.LazyAttribute(lambda record: f"/tmp/{record.subcommand}-{record.seed}")
    status = "ok"
    exit_code = 0
    wall_time = 1.0
    version = __version__

    @classmethod
    def make(cls, subcommand: str, output_dir: str, status: str = "ok") -> RunRecord:
        """ A registered run with the exit code its status implies. """
        exit_code = {"ok": 0, "invariant_failure": 1, "solver_error": 3}[status]
        return RunRecordFactory(subcommand=subcommand, output_dir=output_dir, status=status, exit_code=exit_code)


class LagrangianCloudFactory(factory.Factory):
    """ n^d atoms of the unit box carrying a seeded value preset. """

    class Meta:
        model = LagrangianCloud

    class Params:
        n = 4
        d = 2
        preset = "uniform_random"
        seed = 0

    atoms = factory.LazyAttribute(lambda cloud: box_atoms(cloud.n, cloud.d))
    values = factory.LazyAttribute(lambda cloud: cloud_values(cloud.preset, cloud.atoms, cloud.seed))


# raw config sections, as configparser hands them over

class RearrangeConfigFactory(factory.DictFactory):
    n = "6"
    d = "2"
    preset = "scrambled_stretch"
    trials = "200"


class AHTConfigFactory(factory.DictFactory):
    domain = "torus"
    n = "16"
    K = "identity"
    preset = "random_smooth"
    T = "0.05"
    dt = "0.01"


class JKOConfigFactory(factory.DictFactory):
    n = "4"
    d = "2"
    preset = "scrambled_stretch"
    h = "0.5"
    steps = "4"


class GNSBConfigFactory(factory.DictFactory):
    domain = "torus"
    n = "16"
    K = "identity"
    eps = "0.1"
    forcing = "hookean"
    preset = "anchored"
    T = "0.05"
    dt = "0.01"


class HFConfigFactory(factory.DictFactory):
    domain = "torus"
    n = "16"
    K = "identity"
    forcing = "hookean"
    preset = "anchored"
    T = "0.05"
    dt = "0.01"


class GHBConfigFactory(factory.DictFactory):
    n = "4"
    d = "2"
    forcing = "rotate"
    preset = "scrambled_stretch"
    h = "0.05"
    T = "0.2"
    trials = "100"


class CrossBurgersConfigFactory(factory.DictFactory):
    n_s = "32"
    T = "0.01"
    dt = "0.001"


class SweepConfigFactory(factory.DictFactory):
    domain = "torus"
    n = "8"
    K = "identity"
    forcing = "hookean"
    preset = "anchored"
    T = "0.04"
    dt = "0.01"
    eps_list = "0.1,0.01"
