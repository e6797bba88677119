def test_init() -> None:
    import mmdadapt
    from mmdadapt import __version__, __version_info__

    assert mmdadapt

    assert isinstance(mmdadapt.__version_info__, tuple)
    assert mmdadapt.__version_info__
    assert isinstance(mmdadapt.__version__, str)
    assert len(mmdadapt.__version__)

    assert isinstance(__version_info__, tuple)
    assert __version_info__
    assert isinstance(__version__, str)
    assert len(__version__)

    from mmdadapt.__version__ import __version__ as __version2__  # noqa  # isort:skip
    from mmdadapt.__version__ import __version_info__ as __version_info2__  # noqa  # isort:skip

    assert isinstance(__version_info2__, tuple)
    assert __version_info2__
    assert isinstance(__version2__, str)
    assert len(__version2__)
    assert __version2__ == __version__ == ".".join(str(part) for part in __version_info__)


def test_all_exports() -> None:
    import mmdadapt

    for name in mmdadapt.__all__:
        assert hasattr(mmdadapt, name), name
    assert mmdadapt.mmd2_biased is mmdadapt.kernels.mmd2_biased
