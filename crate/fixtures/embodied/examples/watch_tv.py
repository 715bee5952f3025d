def watch_tv():
    # Step 1: Turn on the tv
    walk('livingroom')
    find('tv')
    switch_on('tv')
    # Step 2: Sit on the sofa
    assert('close' to 'sofa')
        else: find('sofa')
    sit('sofa')
