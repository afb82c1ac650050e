import tempfile
from pathlib import Path

import numpy as np
import torch
from django.test import SimpleTestCase

from adaptation.augmentation import MANIFEST_FILE, augment_nine, build_training_manifest
from adaptation.conditioning import CENTER_ORDER, PLANE_ORDER, Modality, enumerate_augmentation_codes
from adaptation.generator import Generator, GeneratorConfig
from adaptation.manifests import load_augmented_manifest
from adaptation.phantoms import generate_dataset, generate_phantom
from adaptation.volume_io import load_mask


class TestUtils:
        '''
        Utility class to collect repetitive setup tasks.
        '''
        @staticmethod
        def generator(seed=0):
            '''
            Small untrained generator; augmentation only needs a shape-preserving map.
            '''
            torch.manual_seed(seed)
            return Generator(GeneratorConfig.desk_scale(n_residual_blocks=1)).eval()


class AugmentNineTests(SimpleTestCase):

    def setUp(self):
        self.volume, self.mask = generate_phantom(0, Modality.T1W, 'ldn', size=(16, 16, 16))
        self.cases = augment_nine(self.volume, self.mask, TestUtils.generator())

    def test_nine_distinct_codes_in_order(self):
        '''
        Test the output count and that codes follow the enumeration order.
        '''
        self.assertEqual(len(self.cases), 9)
        self.assertEqual([case.code for case in self.cases], enumerate_augmentation_codes(Modality.T2W))

    def test_masks_untouched(self):
        '''
        Test that every output mask is bit identical to the input mask.
        '''
        for case in self.cases:
            self.assertTrue(np.array_equal(case.mask.labels, self.mask.labels))

    def test_shapes_preserved(self):
        '''
        Test that every fake keeps the source shape and spacing.
        '''
        for case in self.cases:
            self.assertEqual(case.volume.shape, self.volume.shape)
            self.assertEqual(case.volume.spacing, self.volume.spacing)

    def test_coverage(self):
        '''
        Test that the codes partition as 3 centers x 3 planes, all T2 without flips.
        '''
        pairs = {(case.code.center, case.code.plane) for case in self.cases}
        self.assertEqual(pairs, {(c, p) for c in CENTER_ORDER for p in PLANE_ORDER})
        for case in self.cases:
            self.assertEqual(case.code.modality, Modality.T2W)
            self.assertEqual(case.code.flips, frozenset())

    def test_mismatched_mask(self):
        '''
        Test that a mask of another shape is rejected.
        '''
        _, other = generate_phantom(0, Modality.T1W, 'ldn', size=(16, 16, 20))
        with self.assertRaises(ValueError):
            augment_nine(self.volume, other, TestUtils.generator())


class BuildManifestTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.root = Path(self.tmp.name)
        self.sources = generate_dataset(2, 2, 1, self.root / 'data', size=(16, 16, 16))
        self.gen = TestUtils.generator(1)

    def test_nine_rows_per_labelled_source(self):
        '''
        Test 9N rows for N labelled sources, skipping the unlabelled one.
        '''
        rows = build_training_manifest(self.sources, self.gen, self.root / 'aug')
        self.assertEqual(len(rows), 18)
        loaded = load_augmented_manifest(self.root / 'aug' / MANIFEST_FILE)
        self.assertEqual(len(loaded), 18)
        for entry in loaded:
            self.assertTrue(Path(entry.image_path).exists())
            self.assertTrue(Path(entry.mask_path).exists())

    def test_masks_match_sources(self):
        '''
        Test that each row's mask carries its source annotation.
        '''
        rows = build_training_manifest(self.sources, self.gen, self.root / 'aug')
        source = load_mask(self.sources[0].mask_path)
        for entry in rows[:9]:
            self.assertTrue(np.array_equal(load_mask(entry.mask_path).labels, source.labels))

    def test_rerun_is_bit_identical(self):
        '''
        Test that a rerun overwrites the same files with the same bytes.
        '''
        first = build_training_manifest(self.sources, self.gen, self.root / 'aug')
        before = {Path(entry.image_path): Path(entry.image_path).read_bytes() for entry in first}
        manifest = (self.root / 'aug' / MANIFEST_FILE).read_bytes()
        second = build_training_manifest(self.sources, self.gen, self.root / 'aug')
        self.assertEqual([entry.image_path for entry in second], [entry.image_path for entry in first])
        for path, data in before.items():
            self.assertEqual(path.read_bytes(), data)
        self.assertEqual((self.root / 'aug' / MANIFEST_FILE).read_bytes(), manifest)

    def test_restricted_codes(self):
        '''
        Test that a center/plane subset yields the matching row count.
        '''
        rows = build_training_manifest(self.sources, self.gen, self.root / 'aug', centers=['ldn'], planes=['axial', 'sag'])
        self.assertEqual(len(rows), 4)

    def test_no_labelled_sources(self):
        '''
        Test that a manifest of unlabelled volumes is rejected.
        '''
        with self.assertRaisesMessage(ValueError, 'no labelled source volumes'):
            build_training_manifest([entry for entry in self.sources if not entry.labeled], self.gen, self.root / 'aug')
