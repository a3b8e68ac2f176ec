# QuantScape パッケージ
