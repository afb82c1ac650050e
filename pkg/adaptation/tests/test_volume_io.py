import tempfile
from pathlib import Path

import nibabel as nib
import numpy as np
from django.test import SimpleTestCase

from adaptation.volume_io import (
    SegmentationMask,
    Volume3D,
    _write_raw,
    case_id,
    list_volumes,
    load_mask,
    load_volume,
    save_mask,
    save_volume,
)


class TestUtils:
        '''
        Utility class to collect repetitive setup tasks.
        '''
        @staticmethod
        def random_volume(shape, seed=0, spacing=(1.0, 0.5, 2.0)):
            '''
            Random float32 volume.
            '''
            rng = np.random.default_rng(seed)
            return Volume3D(rng.random(shape, dtype=np.float32), spacing)

        @staticmethod
        def random_mask(shape, seed=0, spacing=(1.0, 1.0, 1.0)):
            '''
            Random four-class mask.
            '''
            rng = np.random.default_rng(seed)
            return SegmentationMask(rng.integers(0, 4, size=shape).astype(np.uint8), spacing)


class VolumeTypeTests(SimpleTestCase):

    def test_rejects_nonpositive_spacing(self):
        '''
        Test that zero spacing is rejected by name.
        '''
        with self.assertRaisesMessage(ValueError, 'nonpositive spacing'):
            Volume3D(np.zeros((2, 2, 2)), (0, 1, 1))

    def test_rejects_wrong_dimensionality(self):
        '''
        Test that 2D grids are rejected.
        '''
        with self.assertRaisesMessage(ValueError, 'expected 3 dimensions'):
            Volume3D(np.zeros((4, 4)), (1, 1, 1))

    def test_rejects_non_finite_values(self):
        '''
        Test that NaN voxels are rejected on ingest.
        '''
        data = np.zeros((2, 2, 2))
        data[0, 0, 0] = np.nan
        with self.assertRaises(ValueError):
            Volume3D(data, (1, 1, 1))

    def test_mask_label_range(self):
        '''
        Test that labels outside {0,1,2,3} are rejected.
        '''
        with self.assertRaisesMessage(ValueError, 'mask labels [4]'):
            SegmentationMask(np.full((2, 2, 2), 4), (1, 1, 1))

    def test_mask_pairs_with_volume(self):
        '''
        Test that a mask must match its volume's shape.
        '''
        mask = TestUtils.random_mask((4, 4, 4))
        with self.assertRaises(ValueError):
            mask.check_pairs_with(TestUtils.random_volume((4, 4, 5)))


class RoundTripTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.root = Path(self.tmp.name)

    def test_raw_volume_is_bit_identical(self):
        '''
        Test the raw format round trip on an 8x8x8 volume.
        '''
        volume = TestUtils.random_volume((8, 8, 8))
        path = save_volume(volume, self.root / 'v.fgv')
        loaded = load_volume(path)
        self.assertTrue(np.array_equal(loaded.data, volume.data))
        self.assertEqual(loaded.data.dtype, volume.data.dtype)
        np.testing.assert_allclose(loaded.spacing, volume.spacing, atol=1e-6)

    def test_nifti_volume_is_bit_identical(self):
        '''
        Test the NIfTI round trip, gzipped and plain.
        '''
        for index, suffix in enumerate(('.nii.gz', '.nii')):
            volume = TestUtils.random_volume((4 + index, 7, 5), seed=index)
            loaded = load_volume(save_volume(volume, self.root / f'v{index}{suffix}'))
            self.assertTrue(np.array_equal(loaded.data, volume.data))
            np.testing.assert_allclose(loaded.spacing, volume.spacing, atol=1e-6)

    def test_random_shapes_both_formats(self):
        '''
        Test round trips over randomized shapes.
        '''
        rng = np.random.default_rng(7)
        for trial in range(6):
            shape = tuple(int(n) for n in rng.integers(4, 33, size=3))
            volume = TestUtils.random_volume(shape, seed=trial)
            for suffix in ('.fgv', '.nii.gz'):
                loaded = load_volume(save_volume(volume, self.root / f't{trial}{suffix}'))
                self.assertTrue(np.array_equal(loaded.data, volume.data))

    def test_mask_round_trip(self):
        '''
        Test that masks keep their labels and integer type.
        '''
        mask = TestUtils.random_mask((6, 5, 4))
        for suffix in ('.fgv', '.nii.gz'):
            loaded = load_mask(save_mask(mask, self.root / f'm{suffix}'))
            self.assertTrue(np.array_equal(loaded.labels, mask.labels))
            self.assertEqual(loaded.labels.dtype, np.uint8)

    def test_load_rejects_nonpositive_spacing(self):
        '''
        Test that a file declaring spacing (0,1,1) fails to load.
        '''
        path = self.root / 'bad.fgv'
        _write_raw(path, np.zeros((2, 2, 2), dtype=np.float32), (0.0, 1.0, 1.0))
        with self.assertRaisesMessage(ValueError, 'nonpositive spacing'):
            load_volume(path)

    def test_load_rejects_2d_image(self):
        '''
        Test that a 2D NIfTI image fails to load.
        '''
        path = self.root / 'flat.nii.gz'
        nib.save(nib.Nifti1Image(np.zeros((4, 4), dtype=np.float32), np.eye(4)), str(path))
        with self.assertRaisesMessage(ValueError, 'expected 3 dimensions'):
            load_volume(path)

    def test_load_rejects_malformed_header(self):
        '''
        Test that garbage files are rejected as malformed.
        '''
        path = self.root / 'junk.fgv'
        path.write_bytes(b'not a volume at all, definitely not')
        with self.assertRaisesMessage(ValueError, 'malformed header'):
            load_volume(path)

    def test_missing_file(self):
        '''
        Test that a missing path raises FileNotFoundError.
        '''
        with self.assertRaises(FileNotFoundError):
            load_volume(self.root / 'absent.fgv')

    def test_unsupported_suffix(self):
        '''
        Test that unknown extensions are rejected.
        '''
        with self.assertRaises(ValueError):
            save_volume(TestUtils.random_volume((2, 2, 2)), self.root / 'v.png')


class CaseIdTests(SimpleTestCase):

    def test_strips_format_suffixes(self):
        '''
        Test that case ids drop .nii.gz, .nii and .fgv.
        '''
        self.assertEqual(case_id('a/t2_001.nii.gz'), 't2_001')
        self.assertEqual(case_id('t2_001.nii'), 't2_001')
        self.assertEqual(case_id('/x/t1_004.fgv'), 't1_004')

    def test_list_volumes(self):
        '''
        Test that directory listings key volume files by case id and skip others.
        '''
        with tempfile.TemporaryDirectory() as tmp:
            root = Path(tmp)
            save_mask(TestUtils.random_mask((2, 2, 2)), root / 'b.fgv')
            save_mask(TestUtils.random_mask((2, 2, 2)), root / 'a.nii.gz')
            (root / 'notes.txt').write_text('x')
            self.assertEqual(sorted(list_volumes(root)), ['a', 'b'])
