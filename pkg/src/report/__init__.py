# 出力とプロット
