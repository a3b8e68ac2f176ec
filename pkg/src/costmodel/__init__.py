# コストモデル（カーネル分解・レイテンシ予測）
