import numpy as np
import pytest
from scipy import ndimage

from anatomesh.synth import (
    BLOB_LABEL,
    DEFAULT_CLASSES,
    MANAGEMENT_BY_CLASS,
    N_CHANNELS,
    ORGAN_LABEL,
    TUBE_LABEL,
    MassSpec,
    SynthConfig,
    SynthError,
    gen_case,
    gen_dataset,
    gen_organ,
    implant_mass,
    load_case,
    save_case,
    soften,
)
from anatomesh.volume import LabelVolume, VolumeError


CONN6 = ndimage.generate_binary_structure(3, 1)


class TestGenOrgan:
    def test_deterministic(self):
        m1, h1 = gen_organ(3)
        m2, h2 = gen_organ(3)
        assert np.array_equal(m1, m2)
        assert np.array_equal(h1, h2)

    def test_seeds_differ(self):
        m1, _ = gen_organ(1)
        m2, _ = gen_organ(2)
        assert not np.array_equal(m1, m2)

    def test_connected_and_inside_grid(self):
        for seed in range(6):
            mask, _ = gen_organ(seed)
            _, n = ndimage.label(mask, structure=CONN6)
            assert n == 1
            assert not mask[[0, -1], :, :].any()
            assert not mask[:, [0, -1], :].any()
            assert not mask[:, :, [0, -1]].any()

    def test_head_end_on_low_x_side(self):
        mask, head = gen_organ(0)
        xs = np.argwhere(mask)[:, 0]
        # the head end sits at the low-x extremity of the organ
        assert abs(head[0] - xs.min()) < 10
        assert head[0] < xs.mean()

    def test_head_thicker_than_tail(self):
        mask, head = gen_organ(4)
        occ = np.argwhere(mask)
        lo_x = occ[:, 0].min()
        hi_x = occ[:, 0].max()
        head_slab = np.count_nonzero(mask[lo_x : lo_x + 8])
        tail_slab = np.count_nonzero(mask[hi_x - 7 : hi_x + 1])
        assert head_slab > tail_slab

    def test_bend_zero_mirror_symmetric(self):
        cfg = SynthConfig(bend=0.0)
        mask, _ = gen_organ(5, cfg)
        # with no bend the shape is symmetric in y about the grid center
        assert np.array_equal(mask, mask[:, ::-1, :])

    def test_small_grid_rejected(self):
        with pytest.raises(SynthError, match="grid"):
            SynthConfig(grid=16)

    def test_bad_mix_rejected(self):
        with pytest.raises(SynthError, match="sum to 1"):
            SynthConfig(class_mix=(0.5, 0.5, 0.5, 0.5))


class TestImplantMass:
    def test_blob_confined_to_head_band(self):
        spec = DEFAULT_CLASSES[2][0]
        hits = 0
        for seed in range(40):
            try:
                organ, head = gen_organ(seed)
                labels = implant_mass(organ, head, spec, seed + 1000)
            except SynthError:
                continue
            hits += 1
            mass = np.argwhere(labels.data == BLOB_LABEL)
            assert mass.size
            occ = np.argwhere(organ)
            span = occ[:, 0].max() - occ[:, 0].min()
            # head band: first ~31% of the long axis (48/156), with slack
            # for the ellipsoid extent
            frac = (mass[:, 0].mean() - occ[:, 0].min()) / span
            assert frac < 0.45
        assert hits >= 30

    def test_body_blob_avoids_head(self):
        spec = DEFAULT_CLASSES[3][0]
        hits = 0
        for seed in range(40):
            try:
                organ, head = gen_organ(seed)
                labels = implant_mass(organ, head, spec, seed + 2000)
            except SynthError:
                continue
            hits += 1
            mass = np.argwhere(labels.data == BLOB_LABEL)
            occ = np.argwhere(organ)
            span = occ[:, 0].max() - occ[:, 0].min()
            frac = (mass[:, 0].mean() - occ[:, 0].min()) / span
            assert frac > 0.25
        assert hits >= 30

    def test_protrusion_bounded(self):
        spec = DEFAULT_CLASSES[2][0]
        organ, head = gen_organ(0)
        labels = implant_mass(organ, head, spec, 11)
        mass = labels.data == BLOB_LABEL
        outside = np.count_nonzero(mass & ~organ)
        assert outside <= 0.2 * np.count_nonzero(mass) + 1

    def test_tube_uses_tube_label(self):
        spec = DEFAULT_CLASSES[4][0]
        organ, head = gen_organ(1)
        labels = implant_mass(organ, head, spec, 12)
        assert (labels.data == TUBE_LABEL).any()
        assert not (labels.data == BLOB_LABEL).any()
        # the tube stays inside the organ and spans much of its length
        tube = np.argwhere(labels.data == TUBE_LABEL)
        occ = np.argwhere(organ)
        span = occ[:, 0].max() - occ[:, 0].min()
        assert (tube[:, 0].max() - tube[:, 0].min()) > 0.5 * span

    def test_organ_voxels_keep_organ_label(self):
        spec = DEFAULT_CLASSES[3][0]
        organ, head = gen_organ(2)
        labels = implant_mass(organ, head, spec, 13)
        mass = labels.data > ORGAN_LABEL
        assert np.array_equal(labels.data > 0, organ | mass)
        assert np.all(labels.data[organ & ~mass] == ORGAN_LABEL)

    def test_bad_spec_rejected(self):
        with pytest.raises(SynthError, match="unknown region"):
            MassSpec(9, ("Torso",), (2.0, 3.0))
        with pytest.raises(SynthError, match="size range"):
            MassSpec(9, ("Head",), (3.0, 2.0))


class TestSoften:
    def _labels(self, seed=0):
        organ, head = gen_organ(seed)
        return implant_mass(organ, head, DEFAULT_CLASSES[2][0], seed + 1)

    def test_zero_noise_is_exact_one_hot(self):
        labels = self._labels()
        probs = soften(labels, 0.0, 99)
        expect = np.eye(N_CHANNELS, dtype=np.float32)[labels.data]
        assert np.array_equal(probs.data, expect)

    def test_rows_normalized(self):
        probs = soften(self._labels(), 0.2, 7)
        np.testing.assert_allclose(probs.data.sum(axis=-1), 1.0, atol=1e-5)

    def test_argmax_mostly_agrees_with_labels(self):
        labels = self._labels(3)
        probs = soften(labels, 0.2, 8)
        agree = (probs.data.argmax(axis=-1) == labels.data).mean()
        assert agree >= 0.99

    def test_deterministic(self):
        labels = self._labels(4)
        a = soften(labels, 0.2, 5)
        b = soften(labels, 0.2, 5)
        assert np.array_equal(a.data, b.data)

    def test_noise_bounds(self):
        with pytest.raises(VolumeError, match="noise"):
            soften(self._labels(), 0.7, 0)


class TestCases:
    def test_class_management_purity(self):
        assert MANAGEMENT_BY_CLASS == {
            1: "Discharge", 2: "Surgery", 3: "Monitoring", 4: "Surgery"
        }
        for cid in (1, 2, 3, 4):
            case = gen_case(cid, 100 + cid)
            assert case.class_id == cid
            assert case.management == MANAGEMENT_BY_CLASS[cid]

    def test_class_one_has_no_mass(self):
        case = gen_case(1, 7)
        assert set(np.unique(case.labels.data)) <= {0, ORGAN_LABEL}

    def test_case_deterministic(self):
        a = gen_case(2, 42)
        b = gen_case(2, 42)
        assert np.array_equal(a.labels.data, b.labels.data)
        assert np.array_equal(a.probs.data, b.probs.data)

    def test_dataset_deterministic_and_mixed(self):
        d1 = gen_dataset(24, 5)
        d2 = gen_dataset(24, 5)
        assert [c.class_id for c in d1] == [c.class_id for c in d2]
        for a, b in zip(d1, d2):
            assert np.array_equal(a.labels.data, b.labels.data)
        # with a uniform mix over 24 draws every class should appear
        assert set(c.class_id for c in d1) == {1, 2, 3, 4}

    def test_dataset_respects_skewed_mix(self):
        cfg = SynthConfig(class_mix=(0.0, 1.0, 0.0, 0.0))
        d = gen_dataset(6, 1, cfg)
        assert all(c.class_id == 2 for c in d)

    def test_empty_dataset_rejected(self):
        with pytest.raises(SynthError):
            gen_dataset(0, 0)


class TestCaseIO:
    def test_round_trip(self, tmp_path):
        case = gen_case(3, 17)
        d = str(tmp_path / "case")
        save_case(case, d)
        back = load_case(d)
        assert np.array_equal(back.labels.data, case.labels.data)
        assert np.array_equal(back.probs.data, case.probs.data)
        assert back.class_id == case.class_id
        assert back.management == case.management
        np.testing.assert_allclose(back.head_end, case.head_end, rtol=1e-8)
        assert back.seed == case.seed
