"""Error-state Kalman filtering with statistical motion models on SO(3).

Modules
-------
manifold       rotations and composite state layouts
lti            linear systems, stationary gains, transfer functions
motion_model   integrator-chain statistical motion models
eskf           generic error-state filter over model plugins
models         position/IMU and inter-IMU plugins
observability  Lie-derivative rank analysis
sim            synthetic trajectories and sensor logs
metrics        RMSE, delay, convergence and noise figures
pipeline       batch runners used by the command-line tool
io             config and log files
cli            ``kinestat`` entry point
"""

__version__ = "0.1.0"
