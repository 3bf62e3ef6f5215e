from benchmark.AbstractBench import AbstractDefenseBench


class FODSBench(AbstractDefenseBench):
    method = "fo-ds"
