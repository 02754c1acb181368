from ecgfusion.estimator import EcgIdentifier


def tiny_estimator(**overrides):
    params = dict(img_size=16, f_max=60.0, kernel_sizes=(3, 7), channels_1d=4, bottleneck_1d=4,
                  depth_1d=1, embedding_1d=16, n_blocks_2d=2, channels_2d=4, embedding_2d=16,
                  latent_dim=8, attention_dim=4, max_epochs=15, learning_rate=3e-3, random_state=0)
    params.update(overrides)
    return EcgIdentifier(**params)
