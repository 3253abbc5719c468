# Testes do projeto nanonmr2d
