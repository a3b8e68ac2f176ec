# 精度モデル
