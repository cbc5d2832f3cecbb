# Dense-array kernel: numpy storage, numba fixed-order GEMM, conv/pool ops.
