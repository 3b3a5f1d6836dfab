from .synthgen import GroundTruth, add_noise, gen_experiment1, gen_experiment2, gen_experiment3, gen_parafac2_bks
