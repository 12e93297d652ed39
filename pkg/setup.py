#!/usr/bin/env python

from setuptools import setup

setup(
    name="tt-video-attack",
    version="0.1.0",
    description="Temporal translation attacks on video classifiers, with a desk-scale transfer benchmark",
    classifiers=["Programming Language :: Python :: 3 :: Only"],
    python_requires=">=3.8",
    install_requires=[
        "numpy==1.24.4",
        "scipy==1.10.1",
        "singer-python==5.13.0",
        "voluptuous==0.13.1",
    ],
    extras_require={"dev": ["pylint", "pytest"]},
    entry_points="""
          [console_scripts]
          tt-video-attack=tt_video_attack:main
      """,
    packages=["tt_video_attack", "tt_video_attack.gradcore"],
)
