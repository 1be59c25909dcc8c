# FolioGraph pipeline package
